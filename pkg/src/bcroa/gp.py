"""Gaussian-process regression with a polynomial mean function.

Each output dimension of the unknown residual gets an independent model with

* mean ``m(x) = phi(x)^T w_hat`` over a truncated monomial feature vector,
  ``w_hat`` being the MAP weights under the prior ``w ~ N(0, sigma_p^2 I)``;
* variance ``sigma^2(x) = k(x, x) - k_*^T (K + sigma_n^2 I)^{-1} k_*`` with an
  RBF kernel ``k(x, x') = s^2 exp(-|x - x'|^2 / (2 l^2))``.

Features are evaluated on coordinates divided by the half-width of the
domain box, so feature columns stay of order one; weights are mapped back to
the original coordinates when the mean polynomial is formed.

The confidence machinery inverts ``beta^2 = 2 B^2 + 300 gamma log^3(k / delta)``
for ``delta`` and books ``(1 - delta)^k``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import BcroaError, DimensionError, GpFitError
from .poly import MonomialBasis, Polynomial, monomial_basis


@dataclass
class GpConfig:
    """Kernel, noise and mean-function settings shared by all outputs."""

    signal_variance: float = 1.0
    length_scale: float = 1.0
    noise_sigma_n: float = 0.01
    prior_weight_variance: float = 1.0
    mean_degree: int = 2
    rkhs_bound_B: float = 1.0
    include_constant: bool = True
    beta: float = 4.0

    def __post_init__(self):
        for name in ("signal_variance", "length_scale", "prior_weight_variance"):
            if not getattr(self, name) > 0:
                raise GpFitError(f"{name} must be positive")
        if self.noise_sigma_n < 0:
            raise GpFitError("noise_sigma_n must be nonnegative")
        if self.mean_degree < 0:
            raise GpFitError("mean_degree must be nonnegative")


@dataclass
class Dataset:
    """Aligned inputs ``(k, n)`` and targets ``(k, p)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        T = np.asarray(self.targets, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if T.ndim == 1:
            T = T[:, None]
        self.inputs, self.targets = X, T
        if X.ndim != 2 or T.ndim != 2 or T.shape[0] != X.shape[0]:
            raise DimensionError("inputs and targets are not aligned")
        if not np.all(np.isfinite(self.targets)):
            raise GpFitError("non-finite targets")

    @property
    def count(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.targets.shape[1])

    def union(self, other: "Dataset") -> "Dataset":
        if self.count == 0:
            return other
        return Dataset(np.vstack([self.inputs, other.inputs]), np.vstack([self.targets, other.targets]))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()

    @classmethod
    def empty(cls, n: int, p: int) -> "Dataset":
        return cls(np.zeros((0, n)), np.zeros((0, p)))


def rbf_kernel(A: np.ndarray, B: np.ndarray, signal_variance: float, length_scale: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (np.sum(A ** 2, axis=1)[:, None] + np.sum(B ** 2, axis=1)[None, :] - 2.0 * A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return signal_variance * np.exp(-0.5 * d2 / length_scale ** 2)


@dataclass
class GpModel:
    """Fitted posterior for every output dimension."""

    config: GpConfig
    basis: MonomialBasis
    scale: np.ndarray
    w_hat: np.ndarray            # (M, p) weights on scaled features
    gram: np.ndarray             # K
    chol: np.ndarray             # lower factor of K + sigma_n^2 I
    dataset: Dataset
    outputs: tuple[int, ...] = ()
    _mean_polys: list | None = field(default=None, repr=False)

    @property
    def state_dim(self) -> int:
        return self.basis.dim

    def features(self, X) -> np.ndarray:
        """Scaled monomial features ``phi(x / scale)`` of shape ``(N, M)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.basis.evaluate(X / self.scale)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance per output at ``X``.

        Returns arrays of shape ``(N, p)`` and ``(N,)`` (the variance is the same
        for every output because they share kernel and inputs), or ``(p,)`` and a
        scalar for a single point.
        """
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        pts = np.atleast_2d(X)
        mean = self.features(pts) @ self.w_hat
        var = self.variance(pts)
        if single:
            return mean[0], float(var[0])
        return mean, var

    def variance(self, X) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        s2 = self.config.signal_variance
        if self.dataset.count == 0:
            return np.full(pts.shape[0], s2)
        ks = rbf_kernel(self.dataset.inputs, pts, s2, self.config.length_scale)
        v = sla.solve_triangular(self.chol, ks, lower=True, check_finite=False)
        var = s2 - np.sum(v * v, axis=0)
        return np.clip(var, 0.0, s2)

    def mean_polynomial(self) -> list[Polynomial]:
        """The exact mean polynomial per output in original coordinates."""
        if self._mean_polys is None:
            polys = []
            n = self.state_dim
            for j in range(self.w_hat.shape[1]):
                coeffs = {}
                for m, w in zip(self.basis, self.w_hat[:, j]):
                    coeffs[m] = float(w) / float(np.prod(self.scale ** np.array(m)))
                polys.append(Polynomial(coeffs, n))
            self._mean_polys = polys
        return list(self._mean_polys)

    def to_json(self) -> dict:
        return {"config": asdict(self.config), "basis": self.basis.as_lists(),
                "scale": self.scale.tolist(), "w_hat_scaled": self.w_hat.T.tolist(),
                "mean_polynomials": [p.to_json() for p in self.mean_polynomial()],
                "outputs": list(self.outputs), "count": self.dataset.count,
                "dataset_sha256": self.dataset.checksum()}


def feature_basis(cfg: GpConfig, n: int) -> MonomialBasis:
    return monomial_basis(cfg.mean_degree, n, 0 if cfg.include_constant else 1)


def fit(data: Dataset, cfg: GpConfig, box: Sequence[tuple[float, float]] | None = None,
        outputs: Sequence[int] | None = None) -> GpModel:
    """Fit one GP per output column.

    The MAP weights solve the augmented least-squares problem
    ``[Phi; (sigma_n/sigma_p) I] w = [y; 0]``, i.e.
    ``w = (Phi^T Phi + sigma_n^2/sigma_p^2 I)^{-1} Phi^T y``, which equals
    ``sigma_p^2 Phi^T (sigma_p^2 Phi Phi^T + sigma_n^2 I)^{-1} y``.
    """
    n = data.state_dim
    if data.count < 1:
        raise GpFitError("at least one measurement is required")
    basis = feature_basis(cfg, n)
    if box is None:
        scale = np.ones(n)
    else:
        scale = np.array([max(abs(a), abs(b)) for a, b in box], dtype=float)
        if box is not None:
            lo = np.array([a for a, _ in box]) - 1e-9 * scale
            hi = np.array([b for _, b in box]) + 1e-9 * scale
            if np.any(data.inputs < lo) or np.any(data.inputs > hi):
                raise GpFitError("training inputs lie outside the domain box")
    X = data.inputs
    Y = data.targets
    Phi = basis.evaluate(X / scale)
    M = Phi.shape[1]
    lam = cfg.noise_sigma_n / math.sqrt(cfg.prior_weight_variance)
    if M:
        # penalty on the unscaled weights w = w_s / d keeps normalization a pure change of variables
        d = np.array([np.prod(scale ** np.array(m)) for m in basis], dtype=float)
        A = np.vstack([Phi, lam * np.diag(1.0 / d)])
        rhs = np.vstack([Y, np.zeros((M, Y.shape[1]))])
        w_hat, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    else:
        w_hat = np.zeros((0, Y.shape[1]))
    K = rbf_kernel(X, X, cfg.signal_variance, cfg.length_scale)
    Kn = K + cfg.noise_sigma_n ** 2 * np.eye(data.count)
    try:
        L = np.linalg.cholesky(Kn)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(Kn))
        raise GpFitError("K + sigma_n^2 I is not positive definite", cond) from None
    outs = tuple(outputs) if outputs is not None else tuple(range(Y.shape[1]))
    return GpModel(cfg, basis, scale, w_hat, K, L, data, outs)


def predict(model: GpModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(x_star)


def mean_polynomial(model: GpModel) -> list[Polynomial]:
    return model.mean_polynomial()


def info_gain(model: GpModel) -> float:
    """``gamma = 1/2 log det(I + K / sigma_n^2)`` from the cached factor."""
    k = model.dataset.count
    if k == 0:
        return 0.0
    sn2 = model.config.noise_sigma_n ** 2
    return float(np.sum(np.log(np.diag(model.chol))) - 0.5 * k * math.log(sn2))


def delta_for_beta(beta: float, k: int, gamma: float, B: float) -> float | None:
    """Solve ``beta^2 = 2 B^2 + 300 gamma log^3(k / delta)`` for ``delta``.

    Returns ``None`` when no ``delta`` in ``(0, 1)`` exists. A zero information
    gain gives ``delta = 0``.
    """
    if not beta > 0 or k < 1 or gamma < 0 or B < 0:
        raise BcroaError("delta_for_beta needs beta > 0, k >= 1, gamma >= 0, B >= 0")
    slack = beta ** 2 - 2.0 * B ** 2
    if slack <= 0:
        return None
    if gamma == 0:
        return 0.0
    delta = k * math.exp(-((slack / (300.0 * gamma)) ** (1.0 / 3.0)))
    if not 0.0 < delta < 1.0:
        return None
    return delta


def confidence(delta: float, k: int) -> float:
    """``(1 - delta)^k``."""
    if not 0.0 <= delta < 1.0 or k < 0:
        raise BcroaError("confidence needs delta in [0, 1) and k >= 0")
    return (1.0 - delta) ** k


@dataclass
class LedgerEntry:
    episode: int
    n: int
    delta: float | None
    beta: float
    gamma: float

    @property
    def confidence(self) -> float | None:
        return None if self.delta is None else confidence(self.delta, self.n)


@dataclass
class ConfidenceLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, episode: int, n: int, beta: float, gamma: float, B: float) -> LedgerEntry:
        e = LedgerEntry(episode, n, delta_for_beta(beta, max(n, 1), gamma, B), beta, gamma)
        self.entries.append(e)
        return e

    def to_json(self) -> list[dict]:
        return [{"episode": e.episode, "n": e.n, "delta": e.delta, "beta": e.beta,
                 "gamma": e.gamma, "confidence": e.confidence} for e in self.entries]


def load_dataset_csv(path, n: int | None = None) -> Dataset:
    """Read ``x_1..x_n, y_1..y_p`` columns (header row required)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xcols = [i for i, h in enumerate(header) if h.strip().startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.strip().startswith("y")]
    if n is not None and len(xcols) != n:
        raise DimensionError(f"dataset has {len(xcols)} input columns, expected {n}")
    if not xcols or not ycols:
        raise DimensionError("dataset needs x_* and y_* columns")
    return Dataset(data[:, xcols], data[:, ycols])


def save_dataset_csv(data: Dataset, path) -> None:
    header = [f"x_{i + 1}" for i in range(data.state_dim)] + [f"y_{i + 1}" for i in range(data.output_dim)]
    np.savetxt(path, np.hstack([data.inputs, data.targets]), delimiter=",",
               header=",".join(header), comments="", fmt="%.17g")


def dumps_model(model: GpModel) -> str:
    return json.dumps(model.to_json(), sort_keys=True, indent=2)
