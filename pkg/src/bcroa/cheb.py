"""Chebyshev interpolation of the non-polynomial part of a system.

Interpolants are computed at Chebyshev-Gauss-Lobatto points with the
cosine-sum formula, evaluated with Clenshaw's recurrence and converted to
the monomial basis through ``T_{j+1} = 2 t T_j - T_{j-1}`` composed with the
interval map ``t = (2x - (a+b)) / (b-a)``.

:func:`approximate_system` walks each non-polynomial component, keeps its
polynomial subtrees exact, fits every maximal univariate non-polynomial
subtree (bivariate ones by tensor product) and returns ``f + P_k`` together
with per-component remainder estimates.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ApproximationError, EvaluationDomainError
from .exprlang import (Binary, Const, Expr, SystemDefinition, Unary, compile_expr, eval_expr,
                       free_vars, to_text, try_to_polynomial)
from .poly import Polynomial

log = logging.getLogger(__name__)

MAX_CONVERT_DEGREE = 30
WARN_CONVERT_DEGREE = 20
MAX_TENSOR_DEGREE = 10
GRID_POINTS = 2000


def interval_transform(x, a: float, b: float):
    """Affine map of ``[a, b]`` onto ``[-1, 1]``."""
    if not a < b:
        raise ApproximationError(f"degenerate interval [{a}, {b}]")
    return (2.0 * np.asarray(x, dtype=float) - (b + a)) / (b - a)


def inverse_transform(t, a: float, b: float):
    return 0.5 * ((b - a) * np.asarray(t, dtype=float) + (b + a))


def cheb_nodes(k: int) -> np.ndarray:
    """Gauss-Lobatto points ``cos(j pi / k)``; the midpoint for ``k = 0``."""
    if k == 0:
        return np.zeros(1)
    return np.cos(np.pi * np.arange(k + 1) / k)


def _coeffs_from_values(vals: np.ndarray, k: int, axis: int = 0) -> np.ndarray:
    """Chebyshev coefficients from values at the ``k+1`` Lobatto points."""
    vals = np.moveaxis(np.asarray(vals, dtype=float), axis, 0)
    if k == 0:
        return np.moveaxis(vals.copy(), 0, axis)
    j = np.arange(k + 1)
    Cmat = np.cos(np.pi * np.outer(j, j) / k)
    w = np.ones(k + 1)
    w[0] = w[-1] = 0.5
    coeffs = (2.0 / k) * np.tensordot(Cmat * w[None, :], vals, axes=(1, 0))
    coeffs[0] *= 0.5
    coeffs[-1] *= 0.5
    return np.moveaxis(coeffs, 0, axis)


def clenshaw(coeffs: Sequence[float], t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    for c in coeffs[:0:-1]:
        b1, b2 = 2.0 * t * b1 - b2 + c, b1
    return t * b1 - b2 + coeffs[0]


@dataclass
class ChebApprox:
    """Univariate interpolant ``sum_i coeffs[i] T_i(I(x))`` in variable ``var``."""

    coeffs: np.ndarray
    degree: int
    interval: tuple[float, float]
    var: int
    source: Expr | None = None
    dim: int = 1

    def __call__(self, x) -> np.ndarray:
        a, b = self.interval
        return clenshaw(self.coeffs, interval_transform(x, a, b))

    def nodes(self) -> np.ndarray:
        a, b = self.interval
        return inverse_transform(cheb_nodes(self.degree), a, b)

    def to_json(self) -> dict:
        return {"kind": "univariate", "var": self.var, "degree": self.degree,
                "interval": list(self.interval), "coeffs": [float(c) for c in self.coeffs],
                "source": to_text(self.source) if self.source is not None else None}


@dataclass
class TensorChebApprox:
    """Bivariate interpolant ``sum_ij C[i,j] T_i(I1(x)) T_j(I2(y))``."""

    coeffs: np.ndarray
    degrees: tuple[int, int]
    intervals: tuple[tuple[float, float], tuple[float, float]]
    vars: tuple[int, int]
    source: Expr | None = None
    dim: int = 2

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        (a1, b1), (a2, b2) = self.intervals
        t1 = interval_transform(pts[:, self.vars[0]], a1, b1)
        t2 = interval_transform(pts[:, self.vars[1]], a2, b2)
        T1 = np.polynomial.chebyshev.chebvander(t1, self.degrees[0])
        T2 = np.polynomial.chebyshev.chebvander(t2, self.degrees[1])
        return np.einsum("ni,ij,nj->n", T1, self.coeffs, T2)

    def to_json(self) -> dict:
        return {"kind": "tensor", "vars": list(self.vars), "degrees": list(self.degrees),
                "intervals": [list(i) for i in self.intervals], "coeffs": self.coeffs.tolist(),
                "source": to_text(self.source) if self.source is not None else None}


@dataclass
class RemainderBound:
    """``4 m rho^-k / (rho - 1)`` for a function bounded by ``m`` on the
    Bernstein ellipse with parameter ``rho``."""

    m: float
    rho: float
    k: int
    bound: float


def remainder_bound(m: float, rho: float, k: int) -> RemainderBound:
    if not rho > 1:
        raise ApproximationError(f"ellipse parameter rho must exceed 1, got {rho}")
    if not m > 0:
        raise ApproximationError("m must be positive")
    if k < 0:
        raise ApproximationError("degree must be nonnegative")
    return RemainderBound(m, rho, k, 4.0 * m * rho ** (-k) / (rho - 1.0))


def _eval_univariate(e: Expr, var: int, xs: np.ndarray, dim: int) -> np.ndarray:
    pts = np.zeros((xs.size, dim))
    pts[:, var] = xs
    return compile_expr(e)(pts)


def cheb_fit(e: Expr, var: int, interval: tuple[float, float], k: int,
             dim: int | None = None) -> ChebApprox:
    """Degree-``k`` interpolant of the univariate expression ``e`` in variable ``var``."""
    fv = free_vars(e)
    if fv - {var}:
        raise ApproximationError(f"expression {to_text(e)} is not univariate in x{var + 1}")
    if k < 0:
        raise ApproximationError("degree must be nonnegative")
    dim = dim or (max(fv | {var}) + 1)
    a, b = interval
    if not a < b:
        raise ApproximationError(f"degenerate interval [{a}, {b}]")
    xs = inverse_transform(cheb_nodes(k), a, b)
    vals = _eval_univariate(e, var, xs, dim)
    if not np.all(np.isfinite(vals)):
        raise EvaluationDomainError("non-finite value at a Chebyshev node", to_text(e))
    coeffs = _coeffs_from_values(vals, k)
    return ChebApprox(np.asarray(coeffs, dtype=float), k, (float(a), float(b)), var, e, dim)


def cheb_fit_tensor(e: Expr, vars: tuple[int, int], intervals, degrees: tuple[int, int],
                    dim: int) -> TensorChebApprox:
    if max(degrees) > MAX_TENSOR_DEGREE:
        raise ApproximationError(f"tensor degree above {MAX_TENSOR_DEGREE} per axis")
    k1, k2 = degrees
    (a1, b1), (a2, b2) = intervals
    x1 = inverse_transform(cheb_nodes(k1), a1, b1)
    x2 = inverse_transform(cheb_nodes(k2), a2, b2)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    pts = np.zeros((g1.size, dim))
    pts[:, vars[0]] = g1.ravel()
    pts[:, vars[1]] = g2.ravel()
    vals = compile_expr(e)(pts).reshape(g1.shape)
    if not np.all(np.isfinite(vals)):
        raise EvaluationDomainError("non-finite value at a Chebyshev node", to_text(e))
    C = _coeffs_from_values(_coeffs_from_values(vals, k1, axis=0), k2, axis=1)
    return TensorChebApprox(C, (k1, k2), (tuple(intervals[0]), tuple(intervals[1])), tuple(vars), e, dim)


def _cheb_basis_polys(k: int, var: int, interval, dim: int) -> list[Polynomial]:
    a, b = interval
    t = Polynomial({tuple(int(i == var) for i in range(dim)): 2.0 / (b - a),
                    (0,) * dim: -(b + a) / (b - a)}, dim)
    T = [Polynomial.constant(1.0, dim), t]
    for _ in range(2, k + 1):
        T.append(t * T[-1] * 2.0 - T[-2])
    return T[:k + 1]


def _check_degree(k: int) -> None:
    if k > MAX_CONVERT_DEGREE:
        raise ApproximationError(f"monomial conversion is capped at degree {MAX_CONVERT_DEGREE}, got {k}")
    if k >= WARN_CONVERT_DEGREE:
        warnings.warn(f"converting a degree-{k} interpolant to monomials is ill-conditioned",
                      RuntimeWarning, stacklevel=3)


def cheb_to_monomial(c: ChebApprox | TensorChebApprox, dim: int | None = None) -> Polynomial:
    """Expand an interpolant into a monomial-basis polynomial in the original variable(s)."""
    if isinstance(c, TensorChebApprox):
        dim = dim or c.dim
        for k in c.degrees:
            _check_degree(k)
        T1 = _cheb_basis_polys(c.degrees[0], c.vars[0], c.intervals[0], dim)
        T2 = _cheb_basis_polys(c.degrees[1], c.vars[1], c.intervals[1], dim)
        out = Polynomial.zero(dim)
        for i in range(c.degrees[0] + 1):
            row = Polynomial.zero(dim)
            for j in range(c.degrees[1] + 1):
                if c.coeffs[i, j] != 0.0:
                    row = row + T2[j] * float(c.coeffs[i, j])
            out = out + T1[i] * row
        return out
    dim = dim or c.dim
    _check_degree(c.degree)
    T = _cheb_basis_polys(c.degree, c.var, c.interval, dim)
    out = Polynomial.zero(dim)
    for a, Ti in zip(c.coeffs, T):
        out = out + Ti * float(a)
    return out


# analyticity screening


def _is_analytic_on(e: Expr, box: Sequence[tuple[float, float]], dim: int, n: int = 2001) -> bool:
    """Heuristic check that ``e`` is analytic on the (projected) box.

    ``abs`` must not see a sign change, ``sqrt``/``log`` need a positive
    argument, ``arccos`` an argument strictly inside ``(-1, 1)`` and divisions
    a denominator without zeros.
    """
    fv = sorted(free_vars(e))
    if not fv:
        return True
    per_axis = max(2, int(round(n ** (1.0 / len(fv)))))
    axes = [np.linspace(box[i][0], box[i][1], per_axis) for i in fv]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.zeros((mesh[0].size, dim))
    for i, g in zip(fv, mesh):
        pts[:, i] = g.ravel()

    def sample(node):
        return compile_expr(node, check=False)(pts)

    def go(node) -> bool:
        if isinstance(node, Unary):
            if node.op in ("abs", "sqrt", "log", "arccos"):
                v = sample(node.arg)
                if node.op == "abs" and (v.min() <= 0 <= v.max()):
                    return False
                if node.op in ("sqrt", "log") and v.min() <= 0:
                    return False
                if node.op == "arccos" and np.abs(v).max() >= 1:
                    return False
            return go(node.arg)
        if isinstance(node, Binary):
            if node.op == "div":
                v = sample(node.right)
                if v.min() <= 0 <= v.max():
                    return False
            return go(node.left) and go(node.right)
        if hasattr(node, "base"):
            return go(node.base)
        return True

    return go(e)


# system approximation


@dataclass
class FittedTerm:
    component: int
    expr: Expr
    approx: ChebApprox | TensorChebApprox
    poly: Polynomial
    analytic: bool
    formal: RemainderBound | None = None

    def to_json(self) -> dict:
        out = self.approx.to_json()
        out.update({"component": self.component, "analytic": self.analytic,
                    "formal_bound": None if self.formal is None else
                    {"m": self.formal.m, "rho": self.formal.rho, "k": self.formal.k,
                     "bound": self.formal.bound}})
        return out


@dataclass
class ComponentRemainder:
    empirical: float
    formal: float | None
    kind: str            # "none", "formal", "empirical"
    analytic: bool

    def to_json(self) -> dict:
        return {"empirical": self.empirical, "formal": self.formal, "kind": self.kind,
                "analytic": self.analytic}


@dataclass
class ApproximatedSystem:
    """``xdot = f + Pk (+ unknown residual)`` with per-component remainders."""

    f: list[Polynomial]
    Pk: list[Polynomial]
    remainder_bounds: list[ComponentRemainder]
    original: SystemDefinition
    degree: int
    terms: list[FittedTerm] = field(default_factory=list)
    origin_corrections: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.original.state_dim

    def polynomial_field(self) -> list[Polynomial]:
        return [a + b for a, b in zip(self.f, self.Pk)]

    def eval(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        pts = np.atleast_2d(X)
        out = np.stack([p.eval(pts) for p in self.polynomial_field()], axis=-1)
        return out[0] if X.ndim == 1 else out

    def to_json(self) -> dict:
        names = self.original.names
        return {"degree": self.degree,
                "f": [p.to_text(names) for p in self.f],
                "Pk": [p.to_text(names) for p in self.Pk],
                "xdot": [p.to_text(names) for p in self.polynomial_field()],
                "xdot_json": [p.to_json() for p in self.polynomial_field()],
                "remainders": [r.to_json() for r in self.remainder_bounds],
                "origin_corrections": self.origin_corrections,
                "terms": [t.to_json() for t in self.terms],
                "warnings": self.warnings}


def _grid_for(vars_: Sequence[int], box, dim: int, total: int = GRID_POINTS) -> np.ndarray:
    vars_ = sorted(vars_)
    if not vars_:
        return np.zeros((1, dim))
    per_axis = total if len(vars_) == 1 else max(2, int(round(total ** (1.0 / len(vars_)))))
    axes = [np.linspace(box[i][0], box[i][1], per_axis) for i in vars_]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.zeros((mesh[0].size, dim))
    for i, g in zip(vars_, mesh):
        pts[:, i] = g.ravel()
    return pts


def approximate_system(s: SystemDefinition, degree: int = 4,
                       rho_estimate: Mapping | None = None) -> ApproximatedSystem:
    """Replace every non-polynomial subtree of ``g`` by a Chebyshev interpolant.

    Parameters
    ----------
    s
        Parsed system.
    degree
        Interpolation degree ``k`` (bivariate terms use ``min(k, 10)`` per axis).
    rho_estimate
        Optional ``(m, rho)`` pairs keyed by component index or by the printed
        term text; used for the formal remainder of analytic terms.
    """
    n = s.state_dim
    rho_estimate = dict(rho_estimate or {})
    box = s.domain
    terms: list[FittedTerm] = []
    msgs: list[str] = []

    def fit(node: Expr, comp: int) -> Polynomial:
        p = try_to_polynomial(node, n)
        if p is not None:
            return p
        fv = free_vars(node)
        if len(fv) <= 1:
            var = next(iter(fv)) if fv else 0
            ca = cheb_fit(node, var, box[var], degree, n)
            poly = cheb_to_monomial(ca, n)
            analytic = _is_analytic_on(node, box, n)
            terms.append(FittedTerm(comp, node, ca, poly, analytic, _formal(node, comp, analytic, degree)))
            return poly
        if isinstance(node, Unary) and node.op == "neg":
            return -fit(node.arg, comp)
        if isinstance(node, Binary) and node.op in ("add", "sub", "mul"):
            a, b = fit(node.left, comp), fit(node.right, comp)
            return {"add": a + b, "sub": a - b, "mul": a * b}[node.op]
        if len(fv) == 2:
            vs = tuple(sorted(fv))
            k = min(degree, MAX_TENSOR_DEGREE)
            ta = cheb_fit_tensor(node, vs, (box[vs[0]], box[vs[1]]), (k, k), n)
            poly = cheb_to_monomial(ta, n)
            analytic = _is_analytic_on(node, box, n)
            terms.append(FittedTerm(comp, node, ta, poly, analytic, None))
            return poly
        raise ApproximationError(f"unsupported non-polynomial subtree in {len(fv)} variables: "
                                 f"{to_text(node, s.names)}")

    def _formal(node, comp, analytic, k):
        key = to_text(node, s.names)
        pair = rho_estimate.get(key, rho_estimate.get(comp))
        if pair is None:
            return None
        if not analytic:
            msgs.append(f"term {key} is not analytic on the domain; formal bound withheld")
            return None
        return remainder_bound(float(pair[0]), float(pair[1]), k)

    Pk: list[Polynomial] = []
    rems: list[ComponentRemainder] = []
    corrections: list[float] = []
    origin = np.zeros(n)
    for i, g in enumerate(s.g):
        start = len(terms)
        if isinstance(g, Const) and g.value == 0.0:
            Pk.append(Polynomial.zero(n))
            rems.append(ComponentRemainder(0.0, 0.0, "none", True))
            corrections.append(0.0)
            continue
        p = fit(g, i)
        comp_terms = terms[start:]
        corr = -s.f[i].eval(origin) - p.eval(origin)
        p = p + corr
        corrections.append(float(corr))
        Pk.append(p)
        pts = _grid_for(free_vars(g), box, n)
        err = float(np.max(np.abs(compile_expr(g)(pts) - p.eval(pts))))
        analytic = all(t.analytic for t in comp_terms)
        formal = None
        if comp_terms and all(t.formal is not None for t in comp_terms) and _additive_only(g, comp_terms):
            formal = sum(t.formal.bound for t in comp_terms) + abs(corr)
        if not analytic:
            msg = (f"component {i + 1}: non-analytic term(s); remainder {err:.3e} is an empirical "
                   f"grid estimate only")
            msgs.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        rems.append(ComponentRemainder(err, formal, "formal" if formal is not None else "empirical",
                                       analytic))
    return ApproximatedSystem(list(s.f), Pk, rems, s, degree, terms, corrections, msgs)


def _additive_only(g: Expr, comp_terms: Sequence[FittedTerm]) -> bool:
    """True when every fitted term enters ``g`` as a signed additive summand."""
    from .exprlang import additive_terms
    summands = []
    for t in additive_terms(g):
        summands.append(t.arg if isinstance(t, Unary) and t.op == "neg" else t)
    return all(any(ft.expr == s for s in summands) for ft in comp_terms)


def max_grid_error(e: Expr, approx: ChebApprox, n: int = GRID_POINTS) -> float:
    """Max ``|e - approx|`` on ``n`` equispaced points of the interpolation interval."""
    a, b = approx.interval
    xs = np.linspace(a, b, n)
    return float(np.max(np.abs(_eval_univariate(e, approx.var, xs, approx.dim) - approx(xs))))
