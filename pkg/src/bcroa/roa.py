"""Episode loop: learned-system assembly, certification, validation and bookkeeping.

One episode unions the measurement data, fits the GP residual model, forms the
learned polynomial system ``f + Pk + m``, certifies the largest Lyapunov
sublevel set, enlarges it into a barrier certificate by alternation, audits the
result on a grid, books the confidence and picks the next sample start.
"""

from __future__ import annotations

import json
import logging
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gp, sim
from .cheb import ApproximatedSystem, approximate_system
from .config import RunConfig
from .errors import BcroaError, DimensionError, EmptySafeSetError
from .exprlang import SystemDefinition, load_system, parse_expr, try_to_polynomial
from .poly import GramLinearMap, Polynomial, monomial_basis
from .sos import AlternationResult, alternate, lie, step1_max_sublevel

log = logging.getLogger(__name__)

ORIGIN_TOL = 1e-6
VALIDATION_TOL = -1e-6


def parse_polynomial(text: str, names: Sequence[str]) -> Polynomial:
    e = parse_expr(text, names)
    p = try_to_polynomial(e, len(names))
    if p is None:
        raise BcroaError(f"not a polynomial: {text!r}")
    return p


def jsonable(obj):
    """Recursively convert numpy scalars and arrays to plain Python."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


# learned system

def assemble_learned_system(approx: ApproximatedSystem, model: gp.GpModel | None,
                            outputs: Sequence[int] | None = None) -> list[Polynomial]:
    """``f + Pk + m`` componentwise.

    ``outputs`` maps the model's columns to state components (all components
    when omitted).
    """
    base = approx.polynomial_field()
    n = len(base)
    if model is None:
        return base
    if model.state_dim != n:
        raise DimensionError(f"model input dimension {model.state_dim} does not match {n}")
    means = model.mean_polynomial()
    outs = list(outputs) if outputs is not None else (list(model.outputs) or list(range(len(means))))
    if len(outs) != len(means) or any(not 0 <= o < n for o in outs):
        raise DimensionError("model outputs do not match the state components")
    learned = list(base)
    for o, m in zip(outs, means):
        learned[o] = learned[o] + m
    r0 = max(abs(p.coeff((0,) * n)) for p in learned)
    if r0 > ORIGIN_TOL:
        warnings.warn(f"learned system does not vanish at the origin (|xdot(0)| = {r0:.3g})")
    return learned


# grids and regions

def grid_axes(box, resolution: int) -> list[np.ndarray]:
    if resolution < 2:
        raise BcroaError("grid resolution must be >= 2 per axis")
    return [np.linspace(a, b, resolution) for a, b in box]


def grid_points(box, resolution: int) -> np.ndarray:
    mesh = np.meshgrid(*grid_axes(box, resolution), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def default_resolution(n: int) -> int:
    return 100 if n <= 2 else 40


@dataclass
class RegionMasks:
    masks: list[np.ndarray]
    union: np.ndarray
    intersection: np.ndarray
    areas: list[float]
    union_area: float
    intersection_area: float
    shape: tuple[int, ...]


def region_ops(h_list: Sequence[Polynomial], box, resolution: int) -> RegionMasks:
    """Pointwise ``h_i >= 0`` masks, their union and intersection, and grid areas."""
    pts = grid_points(box, resolution)
    shape = (resolution,) * len(box)
    cell = float(np.prod([(b - a) / (resolution - 1) for a, b in box]))
    masks = [np.asarray(h.eval(pts) >= 0).reshape(shape) for h in h_list]
    if masks:
        union = np.logical_or.reduce(masks)
        inter = np.logical_and.reduce(masks)
    else:
        union = inter = np.zeros(shape, dtype=bool)
    return RegionMasks(masks, union, inter, [float(m.sum()) * cell for m in masks],
                       float(union.sum()) * cell, float(inter.sum()) * cell, shape)


@dataclass
class ValidationReport:
    points: int
    inside: int
    barrier_violations: int
    lyapunov_violations: int
    containment_violations: int
    contained_in_domain: bool
    empty: bool
    area: float

    @property
    def violations(self) -> int:
        return self.barrier_violations + self.lyapunov_violations + self.containment_violations

    @property
    def accepted(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["violations"] = self.violations
        d["accepted"] = self.accepted
        return jsonable(d)


def validate_certificate(h: Polynomial, learned: Sequence[Polynomial], V: Polynomial,
                         box, resolution: int | None = None, c_star: float | None = None,
                         tol: float = VALIDATION_TOL) -> ValidationReport:
    """Audit the barrier conditions on a grid over ``box``.

    Counts points of ``{h >= 0}`` where ``dh/dx xdot < tol`` or
    ``-dV/dx xdot < tol``, and (when ``c_star`` is given) points of
    ``{V <= c_star}`` outside ``{h >= 0}``. The domain flag is false when
    ``h >= 0`` somewhere on the box boundary.
    """
    n = h.dim
    res = resolution or default_resolution(n)
    pts = grid_points(box, res)
    hv = h.eval(pts)
    inside = hv >= 0
    hdot = lie(h, learned).eval(pts[inside])
    vdot = lie(V, learned).eval(pts[inside])
    bar = int(np.sum(hdot < tol))
    lyap = int(np.sum(-vdot < tol))
    cont = 0
    if c_star is not None:
        cont = int(np.sum((V.eval(pts) <= c_star) & ~inside))
    idx = np.indices((res,) * n).reshape(n, -1).T
    boundary = np.any((idx == 0) | (idx == res - 1), axis=1)
    cell = float(np.prod([(b - a) / (res - 1) for a, b in box]))
    return ValidationReport(len(pts), int(inside.sum()), bar, lyap, cont,
                            not bool(np.any(inside & boundary)), not bool(inside.any()),
                            float(inside.sum()) * cell)


# probability bookkeeping

def theorem2_bounds(entries: Sequence[tuple[float, int]]) -> tuple[float, float]:
    """``(min, max)`` of ``(1 - delta_i)^{n_i}``: union and intersection bounds."""
    if not entries:
        raise BcroaError("theorem2_bounds needs at least one episode")
    conf = [gp.confidence(d, n) for d, n in entries]
    return min(conf), max(conf)


# contours

def contour_polylines(h: Polynomial, box, resolution: int, level: float = 0.0) -> list[np.ndarray]:
    """Level-set polylines of a 2D polynomial in physical coordinates."""
    from skimage.measure import find_contours

    axes = grid_axes(box, resolution)
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    Z = h.eval(np.stack([X.ravel(), Y.ravel()], axis=-1)).reshape(X.shape)
    out = []
    for c in find_contours(Z, level):
        sx = (box[0][1] - box[0][0]) / (resolution - 1)
        sy = (box[1][1] - box[1][0]) / (resolution - 1)
        out.append(np.column_stack([box[0][0] + c[:, 0] * sx, box[1][0] + c[:, 1] * sy]))
    return out


def slice_polyline_sets(h: Polynomial, box, resolution: int, slices: int = 5,
                        axis: int = 2) -> list[tuple[float, list[np.ndarray]]]:
    """Contours of a 3D polynomial on planes ``x_axis = const``."""
    n = h.dim
    keep = [i for i in range(n) if i != axis]
    out = []
    for v in np.linspace(box[axis][0], box[axis][1], slices + 2)[1:-1]:
        sub = [Polynomial.variable(keep[0], n), Polynomial.variable(keep[1], n)]
        sub_all = [None] * n
        sub_all[keep[0]], sub_all[keep[1]] = sub[0], sub[1]
        sub_all[axis] = Polynomial.constant(float(v), n)
        h2 = h.substitute(sub_all)
        h2 = Polynomial({(m[keep[0]], m[keep[1]]): c for m, c in h2.coeffs.items()}, 2)
        out.append((float(v), contour_polylines(h2, [box[keep[0]], box[keep[1]]], resolution)))
    return out


def write_contours_csv(path, polylines: Sequence[np.ndarray], names: Sequence[str],
                       slice_value: float | None = None, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="ascii") as fh:
        if not append:
            cols = ["segment"] + list(names[:2]) + (["slice"] if slice_value is not None or len(names) > 2 else [])
            fh.write(",".join(cols) + "\n")
        for k, pl in enumerate(polylines):
            for x, y in pl:
                row = [str(k), f"{x:.10g}", f"{y:.10g}"]
                if slice_value is not None:
                    row.append(f"{slice_value:.10g}")
                fh.write(",".join(row) + "\n")


def write_variance_csv(path, model: gp.GpModel, box, resolution: int, names: Sequence[str]) -> None:
    """Posterior variance on a 2D grid (3D: the ``x_3 = 0`` plane)."""
    n = model.state_dim
    axes = grid_axes(box[:2], resolution)
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.zeros((X.size, n))
    pts[:, 0], pts[:, 1] = X.ravel(), Y.ravel()
    var = model.variance(pts)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{names[0]},{names[1]},variance\n")
        for (x, y), v in zip(pts[:, :2], var):
            fh.write(f"{x:.10g},{y:.10g},{v:.10g}\n")


# episode loop

@dataclass
class RoaEstimate:
    episode: int
    h: Polynomial
    gram: list | None
    c_star: float
    delta: float | None
    n: int
    gamma: float
    confidence: float | None
    validation: ValidationReport
    learned: list[Polynomial]
    alternation: AlternationResult
    next_start: list[float] | None = None
    next_score: float | None = None

    def to_json(self, names) -> dict:
        alt = self.alternation
        return jsonable({"episode": self.episode, "h": self.h.to_text(names), "h_json": self.h.to_json(),
                "c_star": self.c_star, "delta": self.delta, "n": self.n, "gamma": self.gamma,
                "confidence": self.confidence, "validation": self.validation.to_json(),
                "learned": [p.to_text(names) for p in self.learned],
                "learned_json": [p.to_json() for p in self.learned],
                "alternation": {"rounds": alt.rounds, "trace_history": alt.trace_history,
                                "margins": alt.margins, "stop_reason": alt.stop_reason,
                                "audit": alt.certificates},
                "gram": self.gram, "next_start": self.next_start, "next_score": self.next_score})


@dataclass
class EpisodeReport:
    estimates: list[RoaEstimate] = field(default_factory=list)
    deltas: list[float | None] = field(default_factory=list)
    union_bound: float | None = None
    intersection_bound: float | None = None
    stop_reason: str = "completed"
    initial_area: float = 0.0
    union_area: float = 0.0
    intersection_area: float = 0.0
    dataset_sizes: list[int] = field(default_factory=list)
    timing: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    approx: dict = field(default_factory=dict)
    names: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        """Deterministic content; wall-clock timing is kept out."""
        return jsonable({"config": self.config, "approximation": self.approx,
                "R": [e.to_json(self.names) for e in self.estimates], "P": self.deltas,
                "union_bound": self.union_bound, "intersection_bound": self.intersection_bound,
                "initial_area": self.initial_area, "union_area": self.union_area,
                "intersection_area": self.intersection_area,
                "dataset_sizes": self.dataset_sizes, "stop_reason": self.stop_reason})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def _batch_seed(master: int, k: int) -> int:
    return int(np.random.SeedSequence([master, k]).generate_state(1)[0])


def run_algorithm1(s: SystemDefinition, cfg: RunConfig, out_dir: str | None = None) -> EpisodeReport:
    """Run ``cfg.episodes`` episodes; truncates at the first failing episode."""
    n = s.state_dim
    names = s.names
    V = parse_polynomial(cfg.V, names)
    approx = approximate_system(s, cfg.cheb_degree)
    sigma_n = cfg.noise_sigma_n if cfg.noise_sigma_n is not None else (s.noise_sigma_n or 0.01)
    B = cfg.rkhs_bound_B if cfg.rkhs_bound_B is not None else s.rkhs_bound_cg
    gcfg = gp.GpConfig(cfg.signal_variance, cfg.length_scale, sigma_n, cfg.prior_weight_variance,
                       cfg.mean_degree, B, include_constant=False, beta=cfg.beta)
    outputs = list(cfg.learn_outputs) if cfg.learn_outputs is not None else list(range(n))
    res = cfg.validation_grid or default_resolution(n)
    box = s.domain
    true_field = s.true_rhs
    # where the run writes and how many workers it uses do not change its content
    content = {k: v for k, v in cfg.to_dict().items() if k not in ("output_dir", "jobs")}
    report = EpisodeReport(config=content, approx=approx.to_json(), names=list(names))
    initial_mask = (V.eval(grid_points(box, res)) <= cfg.c0)
    cell = float(np.prod([(b - a) / (res - 1) for a, b in box]))
    report.initial_area = float(initial_mask.sum()) * cell

    start = np.array(cfg.initial_start if cfg.initial_start else [-0.05] * n, dtype=float)
    if start.shape != (n,):
        raise DimensionError(f"initial_start needs {n} entries")
    data = gp.Dataset.empty(n, len(outputs))
    ledger = gp.ConfidenceLedger()
    hs = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def batch_from(x0, k):
        traj = sim.integrate(true_field, x0, cfg.horizon, cfg.dt, box)
        mb = sim.measure(s, approx, traj, cfg.stride, _batch_seed(cfg.seed, k), sigma_n)
        return gp.Dataset(mb.inputs, mb.targets[:, outputs]), traj

    batch, _ = batch_from(start, 0)
    for ep in range(1, cfg.episodes + 1):
        t0 = time.perf_counter()
        data = data.union(batch)
        try:
            model = gp.fit(data, gcfg, box=box, outputs=outputs)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                learned = assemble_learned_system(approx, model, outputs)
            learned = [_drop_constant(p) for p in learned]
            s1 = step1_max_sublevel(V, learned, cfg.mult_degree, cfg.c_max, cfg.step1_tol)
            c_star = s1.c_star
            h0 = Polynomial.constant(c_star, n) - V
            alt = alternate(V, learned, h0, cfg.barrier_degree, cfg.mult_degree, cfg.eps,
                            cfg.max_rounds, cfg.origin_margin, cfg.trace_cap,
                            c_star if cfg.contain else None)
        except BcroaError as exc:
            report.stop_reason = f"episode {ep}: {exc}"
            log.warning("stopping: %s", report.stop_reason)
            break
        h = alt.h
        val = validate_certificate(h, learned, V, box, res, c_star)
        gamma = gp.info_gain(model)
        entry = ledger.record(ep, data.count, cfg.beta, gamma, B)
        gram = GramLinearMap.from_basis(monomial_basis(cfg.barrier_degree // 2, n)).canonical_gram(h)
        est = RoaEstimate(ep, h, gram.tolist(), c_star, entry.delta, data.count, gamma, entry.confidence,
                          val, learned, alt)
        report.estimates.append(est)
        report.deltas.append(entry.delta)
        report.dataset_sizes.append(data.count)
        hs.append(h)
        if out_dir:
            _write_episode(out_dir, est, model, data, box, res, names)
        if ep < cfg.episodes:
            try:
                x_star, score, next_batch = _resample(model, learned, h, box, cfg, s, approx,
                                                      outputs, sigma_n, ep)
            except EmptySafeSetError as exc:
                report.stop_reason = f"episode {ep}: {exc}"
                report.timing.append(time.perf_counter() - t0)
                break
            est.next_start, est.next_score = [float(v) for v in x_star], score
            batch = next_batch
        report.timing.append(time.perf_counter() - t0)
        log.info("episode %d: c*=%.4g rounds=%d area=%.4g n=%d", ep, c_star, alt.rounds, val.area, data.count)

    conf = [(e.delta, e.n) for e in report.estimates if e.delta is not None]
    if conf:
        report.union_bound, report.intersection_bound = theorem2_bounds(conf)
    if hs:
        rm = region_ops(hs, box, res)
        report.union_area, report.intersection_area = rm.union_area, rm.intersection_area
    if out_dir:
        _write_summary(out_dir, report, V, hs, box, res, names, cfg)
    return report


def _drop_constant(p: Polynomial) -> Polynomial:
    """Remove a sub-tolerance constant so SOS targets vanish at the origin."""
    n = p.dim
    c = p.coeff((0,) * n)
    if c != 0 and abs(c) <= ORIGIN_TOL:
        return p - Polynomial.constant(c, n)
    return p


def _resample(model, learned, h, box, cfg, s, approx, outputs, sigma_n, ep):
    fn = sim.polynomial_field(learned)
    pts = grid_points(box, cfg.validation_grid or default_resolution(len(box)))
    inside = pts[h.eval(pts) >= 0]
    if len(inside) == 0:
        raise EmptySafeSetError("empty safe set: the certified region has no grid points")
    lo, hi = inside.min(axis=0), inside.max(axis=0)
    cands = sim.candidate_grid(lo, hi, cfg.candidates_per_axis)
    x_star, score, _ = sim.select_sample(model, h.eval, cands, cfg.horizon, cfg.dt, fn,
                                         cfg.score_stride, box)
    traj = sim.integrate(s.true_rhs, x_star, cfg.horizon, cfg.dt, box)
    mb = sim.measure(s, approx, traj, cfg.stride, _batch_seed(cfg.seed, ep), sigma_n)
    return x_star, score, gp.Dataset(mb.inputs, mb.targets[:, outputs])


def _write_episode(out_dir, est: RoaEstimate, model, data, box, res, names) -> None:
    d = os.path.join(out_dir, f"episode_{est.episode:02d}")
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "estimate.json"), "w", encoding="utf-8") as fh:
        json.dump(est.to_json(names), fh, sort_keys=True, indent=2)
    with open(os.path.join(d, "gp_model.json"), "w", encoding="utf-8") as fh:
        fh.write(gp.dumps_model(model))
    gp.save_dataset_csv(data, os.path.join(d, "dataset.csv"))
    write_variance_csv(os.path.join(d, "variance.csv"), model, box, min(res, 60), names)
    _write_region_contours(os.path.join(d, "contour_h.csv"), est.h, box, res, names)


def _write_region_contours(path, h: Polynomial, box, res, names) -> None:
    if h.dim == 2:
        write_contours_csv(path, contour_polylines(h, box, res), names)
    elif h.dim == 3:
        first = True
        for v, pls in slice_polyline_sets(h, box, res):
            write_contours_csv(path, pls, names, slice_value=v, append=not first)
            first = False


def _write_summary(out_dir, report: EpisodeReport, V, hs, box, res, names, cfg) -> None:
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.dumps())
    with open(os.path.join(out_dir, "timing.json"), "w", encoding="utf-8") as fh:
        json.dump({"episode_seconds": report.timing}, fh, indent=2)
    _write_region_contours(os.path.join(out_dir, "contour_lcroa.csv"),
                           Polynomial.constant(cfg.c0, V.dim) - V, box, res, names)


def run_from_config(cfg: RunConfig, out_dir: str | None = None) -> EpisodeReport:
    cfg.validate()
    return run_algorithm1(load_system(cfg.system), cfg, out_dir)
