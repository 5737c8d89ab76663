"""Sum-of-squares programs and the three barrier-certificate steps.

An :class:`SosProgram` collects scalar decision variables, polynomials that
are affine in them (:class:`AffinePoly`), SOS multipliers ``L = z^T Q z`` with
``Q`` psd, and SOS membership constraints on affine targets. :meth:`compile`
turns the program into an :class:`~bcroa.sdp.SdpProblem` in image (LMI) form:

* every target ``p`` gets a Gram matrix ``G`` over a monomial basis chosen from
  the degree range of its support; all Gram entries except one canonical
  position per monomial are free variables and the canonical entry is fixed by
  coefficient matching, so ``z^T G z = p`` holds identically;
* feasibility programs maximize a common margin ``t`` with ``G - t I`` psd for
  every SOS block, capped by ``t <= 1``; the program is feasible iff
  ``t* >= -1e-8``.

The steps:

``step1_max_sublevel``
    bisection on ``c`` for ``-dV/dx xdot - Lc (c - V)`` SOS.
``step2_multipliers``
    joint search of ``L1, L2`` with ``-dV/dx xdot - L1 h`` and
    ``dh/dx xdot - L2 h`` SOS for fixed ``h``.
``step3_enlarge``
    maximize the trace of the canonical Gram of ``h`` for fixed ``L1, L2``.
``alternate``
    repeat steps 2 and 3 until the trace increment drops below ``eps``.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BcroaError, SosInfeasibleError, UnrepresentableMonomialError
from .poly import (GramLinearMap, MonomialBasis, Polynomial, grlex_key, monomial_basis,
                   monomials_of_degree)
from .sdp import SdpOptions, SdpProblem, SdpSolution, solve

log = logging.getLogger(__name__)

CONST = -1
FEAS_TOL = 1e-8
PSD_TOL = 1e-7
RESIDUAL_TOL = 1e-8


class AffinePoly:
    """Polynomial whose coefficients are affine in decision variables.

    ``terms[m]`` maps a variable index (or ``CONST``) to its coefficient in
    the coefficient of monomial ``m``.
    """

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: dict | None = None):
        self.dim = dim
        self.terms: dict[tuple, dict[int, float]] = {}
        for m, row in (terms or {}).items():
            clean = {k: v for k, v in row.items() if v != 0.0}
            if clean:
                self.terms[tuple(m)] = clean

    @classmethod
    def from_poly(cls, p: Polynomial) -> "AffinePoly":
        return cls(p.dim, {m: {CONST: c} for m, c in p.coeffs.items()})

    @classmethod
    def zero(cls, dim: int) -> "AffinePoly":
        return cls(dim)

    def copy(self) -> "AffinePoly":
        return AffinePoly(self.dim, {m: dict(r) for m, r in self.terms.items()})

    def _combine(self, other: "AffinePoly", s: float) -> "AffinePoly":
        out = {m: dict(r) for m, r in self.terms.items()}
        for m, row in other.terms.items():
            dst = out.setdefault(m, {})
            for k, v in row.items():
                dst[k] = dst.get(k, 0.0) + s * v
        return AffinePoly(self.dim, out)

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = AffinePoly.from_poly(other)
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            other = AffinePoly.from_poly(other)
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, s: float) -> "AffinePoly":
        return AffinePoly(self.dim, {m: {k: s * v for k, v in r.items()} for m, r in self.terms.items()})

    def mul_poly(self, p: Polynomial) -> "AffinePoly":
        out: dict[tuple, dict[int, float]] = defaultdict(dict)
        pc = p.coeffs
        for m1, row in self.terms.items():
            for m2, c in pc.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                dst = out[m]
                for k, v in row.items():
                    dst[k] = dst.get(k, 0.0) + v * c
        return AffinePoly(self.dim, out)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return self.mul_poly(other)
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return NotImplemented

    __rmul__ = __mul__

    def diff(self, i: int) -> "AffinePoly":
        out = {}
        for m, row in self.terms.items():
            if m[i] > 0:
                dm = list(m)
                dm[i] -= 1
                out[tuple(dm)] = {k: v * m[i] for k, v in row.items()}
        return AffinePoly(self.dim, out)

    def lie_derivative(self, xdot: Sequence[Polynomial]) -> "AffinePoly":
        out = AffinePoly.zero(self.dim)
        for i, f in enumerate(xdot):
            out = out + self.diff(i).mul_poly(f)
        return out

    def support(self) -> list[tuple]:
        return sorted((m for m, r in self.terms.items()
                       if any(abs(v) > 1e-14 for v in r.values())), key=grlex_key)

    def value(self, y: np.ndarray) -> Polynomial:
        out = {}
        for m, row in self.terms.items():
            out[m] = sum(v * (1.0 if k == CONST else y[k]) for k, v in row.items())
        return Polynomial(out, self.dim)

    def coefficient(self, m) -> dict[int, float]:
        return dict(self.terms.get(tuple(m), {}))

    def variables(self) -> set[int]:
        return {k for r in self.terms.values() for k in r if k != CONST}


@dataclass
class AffineScalar:
    """Scalar affine expression ``const + sum coefs[k] * y_k``."""

    coefs: dict[int, float] = field(default_factory=dict)
    const: float = 0.0

    def value(self, y) -> float:
        return self.const + sum(v * y[k] for k, v in self.coefs.items())


@dataclass
class MultiplierSlot:
    name: str
    basis: MonomialBasis
    entries: dict[tuple[int, int], int]
    poly: AffinePoly


@dataclass
class SosConstraint:
    """``target`` must be SOS. ``margin`` ties the Gram to the program margin,
    ``backoff`` requires ``G - backoff I`` psd."""

    name: str
    target: AffinePoly
    margin: bool = True
    backoff: float = 0.0
    basis: MonomialBasis | None = None


@dataclass
class GramCertificate:
    name: str
    basis: MonomialBasis
    gram: np.ndarray
    target: Polynomial
    residual: float
    min_eig: float

    def to_json(self) -> dict:
        return {"name": self.name, "basis": self.basis.as_lists(), "gram": self.gram.tolist(),
                "target": self.target.to_json(), "residual": self.residual, "min_eig": self.min_eig}


@dataclass
class SosCertificate:
    """Gram matrices per SOS slot, recovered multipliers, residuals and margin."""

    grams: list[GramCertificate]
    multipliers: dict[str, Polynomial]
    margin: float | None
    status: str
    objective: float | None = None

    @property
    def residual(self) -> float:
        return max((g.residual for g in self.grams), default=0.0)

    @property
    def min_eig(self) -> float:
        return min((g.min_eig for g in self.grams), default=0.0)

    @property
    def feasible(self) -> bool:
        ok = self.status == "optimal"
        if self.margin is not None:
            ok = ok and self.margin >= -FEAS_TOL
        return ok

    def sound(self) -> bool:
        return self.residual <= RESIDUAL_TOL * max(1.0, self.scale()) and self.min_eig >= -PSD_TOL

    def scale(self) -> float:
        return max((g.target.max_abs_coeff() for g in self.grams), default=1.0)

    def to_json(self) -> dict:
        return {"status": self.status, "margin": self.margin, "objective": self.objective,
                "residual": self.residual, "min_eig": self.min_eig,
                "multipliers": {k: v.to_json() for k, v in self.multipliers.items()},
                "grams": [g.to_json() for g in self.grams]}


def audit_gram(name: str, target: Polynomial, basis: MonomialBasis, gram: np.ndarray) -> GramCertificate:
    """Re-check ``target == z^T G z`` and ``G`` psd without the solver."""
    gmap = GramLinearMap.from_basis(basis)
    recon = gmap.reconstruct(gram)
    residual = (recon - target).max_abs_coeff()
    ev = float(np.linalg.eigvalsh(0.5 * (gram + gram.T)).min()) if gram.size else 0.0
    return GramCertificate(name, basis, gram, target, float(residual), ev)


def choose_gram_basis(support: Sequence[tuple], dim: int) -> MonomialBasis:
    """Half-degree basis for a target with the given structural support.

    Keeps monomials whose total degree lies in ``[ceil(dmin/2), dmax/2]`` and
    whose exponent in each variable is at most ``ceil(deg_i/2)``, where
    ``deg_i`` is the largest exponent of variable ``i`` in the support.
    Squares of lower- or higher-degree terms could not cancel, so the
    reduction loses no SOS decompositions.
    """
    if not support:
        return MonomialBasis((), dim)
    degs = [sum(m) for m in support]
    dmax, dmin = max(degs), min(degs)
    if dmax % 2:
        top = max(support, key=lambda m: (sum(m), grlex_key(m)))
        raise UnrepresentableMonomialError(top, "odd-degree target")
    lo = (dmin + 1) // 2
    caps = [(max(m[i] for m in support) + 1) // 2 for i in range(dim)]
    ms = [m for d in range(lo, dmax // 2 + 1) for m in monomials_of_degree(d, dim)
          if all(e <= c for e, c in zip(m, caps))]
    return MonomialBasis(tuple(ms), dim)


class SosProgram:
    """Builder for SOS programs in image form."""

    def __init__(self, dim: int):
        self.dim = dim
        self.nvars = 0
        self.var_names: list[str] = []
        self.multipliers: list[MultiplierSlot] = []
        self.constraints: list[SosConstraint] = []
        self.nonneg: list[tuple[str, AffineScalar]] = []
        self.objective: AffineScalar | None = None
        self.margin_var: int | None = None
        self._compiled = None

    def new_var(self, name: str = "") -> int:
        self.var_names.append(name or f"v{self.nvars}")
        self.nvars += 1
        return self.nvars - 1

    def free_poly(self, monomials: Sequence[tuple], name: str = "p") -> tuple[AffinePoly, dict[tuple, int]]:
        """Polynomial with one free coefficient per monomial."""
        idx = {}
        terms = {}
        for m in monomials:
            k = self.new_var(f"{name}[{m}]")
            idx[tuple(m)] = k
            terms[tuple(m)] = {k: 1.0}
        return AffinePoly(self.dim, terms), idx

    def sos_poly(self, basis: MonomialBasis, name: str = "L") -> AffinePoly:
        """SOS multiplier ``z^T Q z`` with a psd block for ``Q``."""
        entries = {}
        terms: dict[tuple, dict[int, float]] = defaultdict(dict)
        n = len(basis)
        for i in range(n):
            for j in range(i, n):
                k = self.new_var(f"{name}.Q[{i},{j}]")
                entries[(i, j)] = k
                m = tuple(a + b for a, b in zip(basis[i], basis[j]))
                terms[m][k] = terms[m].get(k, 0.0) + (1.0 if i == j else 2.0)
        poly = AffinePoly(self.dim, terms)
        self.multipliers.append(MultiplierSlot(name, basis, entries, poly))
        return poly

    def add_sos(self, target: AffinePoly, name: str = "", margin: bool = True,
                backoff: float = 0.0, basis: MonomialBasis | None = None) -> None:
        self.constraints.append(SosConstraint(name or f"sos{len(self.constraints)}", target,
                                              margin, backoff, basis))

    def add_nonneg(self, expr: AffineScalar, name: str = "") -> None:
        self.nonneg.append((name or f"ineq{len(self.nonneg)}", expr))

    def maximize(self, expr: AffineScalar) -> None:
        self.objective = expr

    # compilation

    def compile(self, use_margin: bool | None = None) -> SdpProblem:
        """Build the LMI-form SDP. Missing objective means margin maximization.

        The problem is built once; later calls return the cached instance.
        """
        if self._compiled is not None:
            return self._compiled
        if use_margin is None:
            use_margin = self.objective is None
        if use_margin and self.margin_var is None:
            self.margin_var = self.new_var("margin")
        t = self.margin_var if use_margin else None

        blocks: list[dict] = []   # per block: {"n", "entries": {(i, j): {var: coef}}, "shift"}
        self._gram_info = []
        for slot in self.multipliers:
            n = len(slot.basis)
            if n == 0:
                continue
            entries = {ij: {k: 1.0} for ij, k in slot.entries.items()}
            blocks.append({"n": n, "entries": entries, "margin": t is not None, "shift": 0.0})
            self._gram_info.append(("mult", slot.name, slot.basis, entries, None))

        for con in self.constraints:
            support = con.target.support()
            if not support:
                continue
            basis = con.basis or choose_gram_basis(support, self.dim)
            gmap = GramLinearMap.from_basis(basis)
            for m in support:
                if m not in gmap.positions:
                    raise UnrepresentableMonomialError(m, con.name)
            entries: dict[tuple[int, int], dict[int, float]] = {}
            for m, plist in gmap.positions.items():
                ci, cj = gmap.canonical_position(m)
                expr = defaultdict(float, con.target.coefficient(m))
                for (i, j) in plist:
                    if (i, j) == (ci, cj):
                        continue
                    k = self.new_var(f"{con.name}.G[{i},{j}]")
                    entries[(i, j)] = {k: 1.0}
                    expr[k] -= 1.0 if i == j else 2.0
                wc = 1.0 if ci == cj else 2.0
                entries[(ci, cj)] = {k: v / wc for k, v in expr.items() if v != 0.0}
            blocks.append({"n": len(basis), "entries": entries,
                           "margin": con.margin and t is not None, "shift": con.backoff})
            self._gram_info.append(("sos", con.name, basis, entries, con))

        scalar_rows = list(self.nonneg)
        if t is not None:
            scalar_rows.append(("margin_cap", AffineScalar({t: -1.0}, 1.0)))

        nv = self.nvars
        mats: dict[tuple[int, int], np.ndarray] = {}
        sizes = []
        for bi, blk in enumerate(blocks):
            n = blk["n"]
            sizes.append(n)
            F = defaultdict(lambda n=n: np.zeros((n, n)))
            for (i, j), row in blk["entries"].items():
                for k, v in row.items():
                    key = 0 if k == CONST else k + 1
                    s = -v if k == CONST else v
                    F[key][i, j] += s
                    if i != j:
                        F[key][j, i] += s
            if blk["margin"]:
                F[t + 1][np.diag_indices(n)] -= 1.0
            if blk["shift"]:
                F[0][np.diag_indices(n)] += blk["shift"]
            for key, M in F.items():
                mats[(key, bi)] = M
        for name, expr in scalar_rows:
            bi = len(sizes)
            sizes.append(1)
            for k, v in expr.coefs.items():
                mats[(k + 1, bi)] = np.array([[v]])
            if expr.const:
                mats[(0, bi)] = np.array([[-expr.const]])

        b = np.zeros(nv)
        if t is not None and self.objective is None:
            b[t] = -1.0
        elif self.objective is not None:
            for k, v in self.objective.coefs.items():
                b[k] = -v
        self._scalar_rows = scalar_rows
        self._use_margin = t is not None
        if not sizes:
            sizes = [1]
        self._compiled = SdpProblem(tuple(sizes), b, mats, labels=list(self.var_names))
        return self._compiled

    def solve(self, opts: SdpOptions | None = None) -> "SosResult":
        prob = self.compile()
        sol = solve(prob, opts)
        return SosResult(self, prob, sol)


class SosResult:
    """Solution of an :class:`SosProgram` with certificate extraction."""

    def __init__(self, prog: SosProgram, problem: SdpProblem, sol: SdpSolution):
        self.prog = prog
        self.problem = problem
        self.sdp = sol
        self.y = sol.y
        t = prog.margin_var if prog._use_margin else None
        self.margin = float(self.y[t]) if t is not None else None
        self.status = sol.status

    @property
    def usable(self) -> bool:
        """Optimal, or an unconverged iterate whose certificate audits clean.

        Soundness rests on the audited Grams and scalar rows, not on
        optimality, so a stalled solve still yields a valid (suboptimal)
        certificate when every check passes.
        """
        if self.status == "optimal":
            return True
        if self.status not in ("max_iter", "numerical_failure"):
            return False
        if not np.all(np.isfinite(self.y)) or not self.certificate().sound():
            return False
        return all(expr.value(self.y) >= -PSD_TOL for _, expr in self.prog._scalar_rows)

    @property
    def feasible(self) -> bool:
        if not self.usable:
            return False
        return self.margin is None or self.margin >= -FEAS_TOL

    def value(self, p: AffinePoly) -> Polynomial:
        return p.value(self.y)

    def scalar(self, k: int) -> float:
        return float(self.y[k])

    def gram(self, entries: dict, n: int) -> np.ndarray:
        G = np.zeros((n, n))
        for (i, j), row in entries.items():
            v = sum(c * (1.0 if k == CONST else self.y[k]) for k, c in row.items())
            G[i, j] = G[j, i] = v
        return G

    def certificate(self) -> SosCertificate:
        grams = []
        mults = {}
        for kind, name, basis, entries, con in self.prog._gram_info:
            G = self.gram(entries, len(basis))
            if kind == "mult":
                slot = next(s for s in self.prog.multipliers if s.name == name)
                poly = self.value(slot.poly)
                mults[name] = poly
                grams.append(audit_gram(name, poly, basis, G))
            else:
                grams.append(audit_gram(name, self.value(con.target), basis, G))
        for slot in self.prog.multipliers:
            if slot.name not in mults:
                mults[slot.name] = Polynomial.zero(self.prog.dim)
        obj = None
        if self.prog.objective is not None:
            obj = self.prog.objective.value(self.y)
        return SosCertificate(grams, mults, self.margin, self.status, obj)


# convenience checks

def sos_feasibility(p: Polynomial, opts: SdpOptions | None = None) -> tuple[bool, SosResult]:
    """Margin test for ``p`` SOS."""
    prog = SosProgram(p.dim)
    prog.add_sos(AffinePoly.from_poly(p), "target")
    res = prog.solve(opts)
    return res.feasible, res


def check_positive_definite(V: Polynomial, eps: float = 1e-6) -> tuple[bool, str]:
    """Screen ``V`` as a Lyapunov candidate.

    Requires ``V(0) = 0`` and ``V - eps * sum_i x_i^(2k)`` SOS, where ``2k`` is
    the lowest total degree present in ``V`` (``2k = 2`` for the usual
    quadratic-plus-higher templates).
    """
    if abs(V.coeff((0,) * V.dim)) > 1e-12:
        return False, "V(0) != 0"
    dmin = V.min_degree()
    if dmin < 2 or dmin % 2:
        return False, f"lowest degree of V is {dmin}; positive definiteness needs an even degree >= 2"
    shift = Polynomial.zero(V.dim)
    for i in range(V.dim):
        e = [0] * V.dim
        e[i] = dmin
        shift = shift + Polynomial({tuple(e): eps}, V.dim)
    ok_v, _ = sos_feasibility(V)
    ok_s, res = sos_feasibility(V - shift)
    if not (ok_v and ok_s):
        return False, f"V - {eps:g}*sum(x_i^{dmin}) is not SOS (margin {res.margin})"
    return True, "ok"


# degree bookkeeping

def multiplier_degree(requested: int, deg_h: int, deg_rest: int) -> int:
    """Smallest even degree ``>= requested`` making ``L*h`` dominate ``deg_rest``
    with an even total degree."""
    if deg_h % 2:
        raise BcroaError(f"an odd-degree ({deg_h}) polynomial cannot carry an SOS multiplier")
    d = max(0, requested)
    d += d % 2
    while True:
        total = max(d + deg_h, deg_rest)
        if d + deg_h >= deg_rest and total % 2 == 0:
            return d
        d += 2


def multiplier_basis(degree: int, dim: int, vanish_at_origin: bool = True) -> MonomialBasis:
    return monomial_basis(degree // 2, dim, 1 if vanish_at_origin else 0)


def barrier_monomials(degree: int, dim: int) -> list[tuple]:
    """Barrier template: all monomials up to ``degree`` except the linear ones."""
    return [m for m in monomial_basis(degree, dim) if sum(m) != 1]


def lie(p: Polynomial, xdot: Sequence[Polynomial]) -> Polynomial:
    return p.lie_derivative(list(xdot))


def _vdot_deg(V: Polynomial, xdot: Sequence[Polynomial]) -> int:
    return lie(V, xdot).degree


# step 1

@dataclass
class Step1Result:
    c_star: float
    certificate: SosCertificate
    multiplier_degree: int
    probes: list[tuple[float, float | None, bool]]
    verified: bool


def step1_program(V: Polynomial, xdot, c: float, deg: int) -> SosProgram:
    """The fixed-``c`` feasibility program ``-dV/dx xdot - Lc (c - V)`` SOS."""
    prog = SosProgram(V.dim)
    Lc = prog.sos_poly(multiplier_basis(deg, V.dim), "Lc")
    vdot = lie(V, xdot)
    target = AffinePoly.from_poly(-vdot) - Lc.mul_poly(Polynomial.constant(c, V.dim) - V)
    prog.add_sos(target, "sublevel")
    return prog


def _step1_probe(V: Polynomial, xdot, c: float, deg: int, opts) -> SosResult:
    return step1_program(V, xdot, c, deg).solve(opts)


def step1_max_sublevel(V: Polynomial, xdot: Sequence[Polynomial], mult_degree: int = 2,
                       c_max: float = 10.0, tol: float = 1e-3, max_iter: int = 30,
                       opts: SdpOptions | None = None, check_v: bool = True) -> Step1Result:
    """Largest ``c`` in ``(0, c_max]`` with ``-dV/dx xdot - Lc (c - V)`` SOS.

    Bisection stops when the bracket is narrower than ``tol * c_max``. The
    returned ``c*`` is re-verified by an independent solve.
    """
    if check_v:
        ok, why = check_positive_definite(V)
        if not ok:
            raise BcroaError(f"V is not a valid Lyapunov candidate: {why}")
    deg = multiplier_degree(mult_degree, V.degree, _vdot_deg(V, xdot))
    probes = []

    def probe(c):
        r = _step1_probe(V, xdot, c, deg, opts)
        probes.append((c, r.margin, r.feasible))
        log.debug("step1 c=%.6g margin=%s feasible=%s", c, r.margin, r.feasible)
        return r

    r_hi = probe(c_max)
    if r_hi.feasible:
        best_c, best = c_max, r_hi
    else:
        lo = tol * c_max
        r_lo = probe(lo)
        if not r_lo.feasible:
            raise SosInfeasibleError(f"no certified sublevel set (infeasible at c = {lo:.3g}, "
                                     f"margin {r_lo.margin})")
        hi = c_max
        best_c, best = lo, r_lo
        for _ in range(max_iter):
            if hi - best_c <= tol * c_max:
                break
            mid = 0.5 * (best_c + hi)
            r = probe(mid)
            if r.feasible:
                best_c, best = mid, r
            else:
                hi = mid
    check = _step1_probe(V, xdot, best_c, deg, opts)
    cert = best.certificate()
    return Step1Result(best_c, cert, deg, probes, check.feasible)


# step 2

@dataclass
class Step2Result:
    L1: Polynomial
    L2: Polynomial
    certificate: SosCertificate
    margin: float
    feasible: bool
    degrees: tuple[int, int]


def step2_multipliers(V: Polynomial, h: Polynomial, xdot: Sequence[Polynomial],
                      mult_degree: int = 2, opts: SdpOptions | None = None) -> Step2Result:
    """Joint search for ``L1, L2`` certifying a fixed barrier ``h``."""
    n = V.dim
    vdot = lie(V, xdot)
    hdot = lie(h, xdot)
    d1 = multiplier_degree(mult_degree, max(h.degree, 0), vdot.degree)
    d2 = multiplier_degree(mult_degree, max(h.degree, 0), hdot.degree)
    # a multiplier must vanish at the origin when h(0) > 0 (targets vanish there)
    vanish = h.coeff((0,) * n) > 0
    prog = SosProgram(n)
    L1 = prog.sos_poly(multiplier_basis(d1, n, vanish), "L1")
    L2 = prog.sos_poly(multiplier_basis(d2, n, vanish), "L2")
    prog.add_sos(AffinePoly.from_poly(-vdot) - L1.mul_poly(h), "lyapunov")
    prog.add_sos(AffinePoly.from_poly(hdot) - L2.mul_poly(h), "barrier")
    res = prog.solve(opts)
    cert = res.certificate()
    return Step2Result(res.value(L1), res.value(L2), cert,
                       res.margin if res.margin is not None else -math.inf, res.feasible, (d1, d2))


# step 3

@dataclass
class Step3Result:
    h: Polynomial
    trace: float
    certificate: SosCertificate
    feasible: bool
    capped: bool
    status: str


def trace_weights(monomials: Sequence[tuple], dim: int, degree: int) -> dict[tuple, float]:
    """Weights ``w`` with ``Tr(Q_h) = sum w[m] h[m]`` for the canonical Gram of ``h``."""
    gmap = GramLinearMap.from_basis(monomial_basis(degree // 2, dim))
    tw = gmap.trace_weights()
    return {m: tw[m] for m in monomials if m in tw}


def canonical_trace(h: Polynomial, degree: int) -> float:
    gmap = GramLinearMap.from_basis(monomial_basis(degree // 2, h.dim))
    return float(np.trace(gmap.canonical_gram(h)))


def step3_enlarge(h_degree: int, L1: Polynomial, L2: Polynomial, V: Polynomial,
                  xdot: Sequence[Polynomial], origin_margin: float = 1e-3,
                  trace_cap: float = 1e4, c_contain: float | None = None,
                  contain_degree: int = 2, backoff: float = 0.0,
                  opts: SdpOptions | None = None) -> Step3Result:
    """Maximize ``Tr(Q_h)`` over the barrier template for fixed multipliers.

    ``c_contain`` adds ``h - L3 (c - V)`` SOS so that ``{V <= c}`` stays inside
    ``{h >= 0}``. ``backoff`` keeps the two certificate Grams at least that far
    inside the psd cone.
    """
    n = V.dim
    prog = SosProgram(n)
    monos = barrier_monomials(h_degree, n)
    h, idx = prog.free_poly(monos, "h")
    vdot = lie(V, xdot)
    prog.add_sos(AffinePoly.from_poly(-vdot) - h.mul_poly(L1), "lyapunov", margin=False, backoff=backoff)
    prog.add_sos(h.lie_derivative(xdot) - h.mul_poly(L2), "barrier", margin=False, backoff=backoff)
    if c_contain is not None:
        dc = multiplier_degree(contain_degree, V.degree, h_degree)
        L3 = prog.sos_poly(multiplier_basis(dc, n, vanish_at_origin=False), "L3")
        prog.add_sos(h - L3.mul_poly(Polynomial.constant(c_contain, n) - V), "containment", margin=False)
    weights = trace_weights(monos, n, h_degree)
    tr = AffineScalar({idx[m]: w for m, w in weights.items()})
    origin = (0,) * n
    prog.add_nonneg(AffineScalar({idx[origin]: 1.0}, -origin_margin), "origin_margin")
    prog.add_nonneg(AffineScalar({k: -v for k, v in tr.coefs.items()}, trace_cap), "trace_cap")
    prog.maximize(tr)
    res = prog.solve(opts)
    h_val = res.value(h)
    trace = tr.value(res.y)
    cert = res.certificate()
    audit = audit_step_certificates(h_val, L1, L2, V, xdot, cert)
    capped = trace >= trace_cap * (1 - 1e-6)
    feasible = res.usable and audit
    return Step3Result(h_val, float(trace), cert, feasible, capped, res.status)


def audit_step_certificates(h: Polynomial, L1: Polynomial, L2: Polynomial, V: Polynomial,
                            xdot: Sequence[Polynomial], cert: SosCertificate) -> bool:
    """Independent re-check of the two barrier memberships from polynomials."""
    vdot = lie(V, xdot)
    targets = {"lyapunov": -vdot - L1 * h, "barrier": lie(h, xdot) - L2 * h}
    ok = True
    for g in cert.grams:
        if g.name in targets:
            chk = audit_gram(g.name, targets[g.name], g.basis, g.gram)
            scale = max(1.0, targets[g.name].max_abs_coeff())
            ok = ok and chk.residual <= RESIDUAL_TOL * scale and chk.min_eig >= -PSD_TOL
    return ok


# alternation

@dataclass
class AlternationResult:
    h: Polynomial
    rounds: int
    trace_history: list[float]
    margins: list[float]
    stop_reason: str
    certificates: list[dict]
    L1: Polynomial | None = None
    L2: Polynomial | None = None


def alternate(V: Polynomial, xdot: Sequence[Polynomial], h0: Polynomial, h_degree: int = 4,
              mult_degree: int = 2, eps: float = 1e-2, max_rounds: int = 10,
              origin_margin: float = 1e-3, trace_cap: float = 1e4,
              c_contain: float | None = None, opts: SdpOptions | None = None) -> AlternationResult:
    """Alternate steps 2 and 3 starting from a certifiable ``h0``."""
    h = h0
    trace = canonical_trace(h0, h_degree)
    history = [trace]
    margins = []
    audit = []
    reason = "max_rounds"
    L1 = L2 = None
    rounds = 0
    for r in range(max_rounds):
        s2 = step2_multipliers(V, h, xdot, mult_degree, opts)
        margins.append(s2.margin)
        audit.append({"round": r + 1, "step": 2, "margin": s2.margin, "feasible": s2.feasible,
                      "residual": s2.certificate.residual, "min_eig": s2.certificate.min_eig})
        if not s2.feasible:
            if r == 0:
                raise SosInfeasibleError(f"initial barrier not certifiable (margin {s2.margin})")
            reason = "step2_infeasible"
            break
        L1, L2 = s2.L1, s2.L2
        s3 = step3_enlarge(h_degree, s2.L1, s2.L2, V, xdot, origin_margin, trace_cap,
                           c_contain, backoff=0.0, opts=opts)
        audit.append({"round": r + 1, "step": 3, "trace": s3.trace, "feasible": s3.feasible,
                      "status": s3.status, "capped": s3.capped,
                      "residual": s3.certificate.residual, "min_eig": s3.certificate.min_eig})
        rounds = r + 1
        if not s3.feasible:
            reason = "step3_infeasible"
            break
        if s3.trace < trace - 1e-9 * max(1.0, abs(trace)):
            reason = "trace_decreased"
            break
        delta = s3.trace - trace
        h, trace = s3.h, s3.trace
        history.append(trace)
        if s3.capped:
            reason = "trace_cap"
            break
        if delta <= eps:
            reason = "converged"
            break
    return AlternationResult(h, rounds, history, margins, reason, audit, L1, L2)
