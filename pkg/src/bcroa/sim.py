"""Fixed-step simulation, measurement generation and the safe sampling policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySafeSetError, BcroaError
from .poly import Polynomial

Field = Callable[[np.ndarray], np.ndarray]

R_CONV = 1e-3
HORIZON = 10.0
DT = 1e-3
STRIDE = 10
SCORE_STRIDE = 100
CANDIDATES_PER_AXIS = 15


def polynomial_field(polys: Sequence[Polynomial]) -> Field:
    """Wrap a polynomial vector field as a batched callable ``(N, n) -> (N, n)``."""
    polys = list(polys)

    def fn(X: np.ndarray) -> np.ndarray:
        return np.stack([p.eval(X) for p in polys], axis=-1)

    return fn


def expanded_box(box: Sequence[tuple[float, float]] | None, factor: float = 2.0):
    """The box scaled by ``factor`` about its center."""
    if box is None:
        return None
    lo = np.array([a for a, _ in box], dtype=float)
    hi = np.array([b for _, b in box], dtype=float)
    c, r = 0.5 * (lo + hi), 0.5 * (hi - lo) * factor
    return c - r, c + r


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    x0: np.ndarray
    converged: bool
    escaped: bool = False

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        n = self.states.shape[1]
        names = list(names) if names else [f"x_{i + 1}" for i in range(n)]
        np.savetxt(path, np.column_stack([self.times, self.states]), delimiter=",",
                   header=",".join(["t"] + names), comments="", fmt="%.12g")


def _rk4_step(fn: Field, X: np.ndarray, dt: float) -> np.ndarray:
    k1 = fn(X)
    k2 = fn(X + 0.5 * dt * k1)
    k3 = fn(X + 0.5 * dt * k2)
    k4 = fn(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps(T: float, dt: float) -> int:
    if not dt > 0 or T < dt:
        raise BcroaError("integrate needs dt > 0 and T >= dt")
    return int(round(T / dt))


def integrate_batch(dynamics: Field, X0, T: float = HORIZON, dt: float = DT,
                    box=None, record_stride: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 for many initial states at once.

    Returns ``(times, states, alive)`` where ``states`` has shape
    ``(n_records, N, n)``. A trajectory that leaves the doubled box (or turns
    non-finite) is frozen and its later records are NaN; ``alive`` flags the
    trajectories that never escaped.
    """
    X = np.array(np.atleast_2d(X0), dtype=float)
    nsteps = _steps(T, dt)
    bounds = expanded_box(box)
    alive = np.ones(X.shape[0], dtype=bool)
    rec_idx = list(range(0, nsteps + 1, record_stride))
    if rec_idx[-1] != nsteps:
        rec_idx.append(nsteps)
    out = np.full((len(rec_idx), X.shape[0], X.shape[1]), np.nan)
    out[0] = X
    r = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, nsteps + 1):
            if alive.any():
                Xa = _rk4_step(dynamics, X[alive], dt)
                ok = np.all(np.isfinite(Xa), axis=1)
                if bounds is not None:
                    ok &= np.all((Xa >= bounds[0]) & (Xa <= bounds[1]), axis=1)
                idx = np.flatnonzero(alive)
                X[idx[ok]] = Xa[ok]
                alive[idx[~ok]] = False
            if r < len(rec_idx) and step == rec_idx[r]:
                out[r][alive] = X[alive]
                r += 1
    times = np.array(rec_idx, dtype=float) * dt
    return times, out, alive


def integrate(dynamics: Field, x0, T: float = HORIZON, dt: float = DT, box=None,
              r_conv: float = R_CONV) -> Trajectory:
    """Classical RK4 from one initial state; partial trajectory on escape."""
    x0 = np.asarray(x0, dtype=float).ravel()
    times, states, alive = integrate_batch(dynamics, x0[None, :], T, dt, box)
    S = states[:, 0, :]
    keep = np.all(np.isfinite(S), axis=1)
    S, t = S[keep], times[keep]
    escaped = not bool(alive[0])
    converged = (not escaped) and float(np.linalg.norm(S[-1])) <= r_conv
    return Trajectory(t, S, x0, converged, escaped)


@dataclass
class MeasurementBatch:
    inputs: np.ndarray
    targets: np.ndarray
    seed: int
    sigma_n: float


def residual(s, approx, X) -> np.ndarray:
    """Deterministic ``[f + g + d_true](x) - [f + Pk](x)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return s.true_rhs(X) - approx.eval(X)


def measure(s, approx, traj: Trajectory, stride: int = STRIDE, seed: int = 0,
            sigma_n: float | None = None) -> MeasurementBatch:
    """Noisy residual targets at every ``stride``-th trajectory state.

    States outside the domain box are skipped so the GP never sees data off
    its feature normalization range.
    """
    if stride < 1:
        raise BcroaError("stride must be >= 1")
    sigma = s.noise_sigma_n if sigma_n is None else float(sigma_n)
    X = traj.states[::stride]
    inside = np.all((X >= s.lower) & (X <= s.upper), axis=1)
    X = X[inside]
    rng = np.random.default_rng(seed)
    Y = residual(s, approx, X) if len(X) else np.zeros((0, s.state_dim))
    if sigma > 0:
        Y = Y + rng.normal(0.0, sigma, size=Y.shape)
    return MeasurementBatch(X, Y, int(seed), sigma)


def candidate_grid(lower, upper, per_axis: int = CANDIDATES_PER_AXIS) -> np.ndarray:
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def trajectory_scores(model, dynamics: Field, region: Callable, starts: np.ndarray,
                      T: float = HORIZON, dt: float = DT, score_stride: int = SCORE_STRIDE,
                      box=None) -> np.ndarray:
    """``sum_t sum_outputs sigma^2(psi(t))`` over recorded points kept inside the region."""
    _, states, _ = integrate_batch(dynamics, starts, T, dt, box, record_stride=score_stride)
    R, N, n = states.shape
    flat = states.reshape(R * N, n)
    finite = np.all(np.isfinite(flat), axis=1)
    keep = np.zeros(R * N, dtype=bool)
    if finite.any():
        keep[finite] = np.asarray(region(flat[finite])) >= 0
    var = np.zeros(R * N)
    if keep.any():
        var[keep] = model.variance(flat[keep])
    p = model.w_hat.shape[1]
    return p * var.reshape(R, N).sum(axis=0)


def select_sample(model, region: Callable, grid, T: float = HORIZON, dt: float = DT,
                  dynamics: Field | None = None, score_stride: int = SCORE_STRIDE,
                  box=None) -> tuple[np.ndarray, float, int]:
    """Pick the candidate start whose learned-system trajectory is most uncertain.

    Candidates outside ``region(x) >= 0`` are dropped first; ties go to the
    lowest remaining grid index. Returns ``(x_star, score, index_into_grid)``.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if dynamics is None:
        raise BcroaError("select_sample needs the learned dynamics")
    inside = np.flatnonzero(np.asarray(region(grid)) >= 0) if len(grid) else np.array([], int)
    if inside.size == 0:
        raise EmptySafeSetError("empty safe set: no candidate start lies inside the region")
    scores = trajectory_scores(model, dynamics, region, grid[inside], T, dt, score_stride, box)
    best = int(np.argmax(scores))  # first maximum
    return grid[inside[best]].copy(), float(scores[best]), int(inside[best])
