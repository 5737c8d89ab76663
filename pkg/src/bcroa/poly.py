"""Sparse multivariate polynomials, monomial bases and Gram maps.

A :class:`Polynomial` maps exponent tuples to float coefficients. Instances
are immutable and kept canonical: coefficients with magnitude below
``DROP_TOL`` are discarded after every arithmetic operation.

Monomials are ordered graded-lexicographically (total degree first, then
lexicographic with ``x1 > x2 > ...``), so a degree-2 basis in two variables
reads ``[1, x1, x2, x1^2, x1*x2, x2^2]``.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError

DROP_TOL = 1e-14

Monomial = tuple[int, ...]


def grlex_key(m: Monomial) -> tuple:
    return (sum(m), tuple(-e for e in m))


def _add_exp(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Immutable sparse polynomial in ``dim`` variables."""

    __slots__ = ("_coeffs", "dim", "_compiled")

    def __init__(self, coeffs: Mapping[Monomial, float] | None = None, dim: int = 1):
        if dim < 1:
            raise DimensionError("polynomial dimension must be positive")
        clean: dict[Monomial, float] = {}
        for m, c in (coeffs or {}).items():
            m = tuple(int(e) for e in m)
            if len(m) != dim:
                raise DimensionError(f"monomial {m} does not have {dim} exponents")
            if any(e < 0 for e in m):
                raise ValueError(f"negative exponent in {m}")
            c = float(c)
            if abs(c) >= DROP_TOL:
                clean[m] = clean.get(m, 0.0) + c
        self._coeffs = {m: c for m, c in clean.items() if abs(c) >= DROP_TOL}
        self.dim = dim
        self._compiled = None

    # construction helpers

    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls({}, dim)

    @classmethod
    def constant(cls, value: float, dim: int) -> "Polynomial":
        return cls({(0,) * dim: value}, dim)

    @classmethod
    def variable(cls, index: int, dim: int) -> "Polynomial":
        if not 0 <= index < dim:
            raise DimensionError(f"variable index {index} out of range for dimension {dim}")
        m = [0] * dim
        m[index] = 1
        return cls({tuple(m): 1.0}, dim)

    @classmethod
    def monomial(cls, exps: Sequence[int], coeff: float = 1.0) -> "Polynomial":
        return cls({tuple(exps): coeff}, len(exps))

    @classmethod
    def variables(cls, dim: int) -> list["Polynomial"]:
        return [cls.variable(i, dim) for i in range(dim)]

    # accessors

    @property
    def coeffs(self) -> dict[Monomial, float]:
        return dict(self._coeffs)

    def coeff(self, m: Monomial) -> float:
        return self._coeffs.get(tuple(m), 0.0)

    def terms(self) -> list[tuple[Monomial, float]]:
        """Terms by descending total degree, basis order within a degree."""
        return sorted(self._coeffs.items(), key=lambda t: (-sum(t[0]), grlex_key(t[0])[1]))

    def monomials(self) -> list[Monomial]:
        return sorted(self._coeffs, key=grlex_key)

    @property
    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((sum(m) for m in self._coeffs), default=-1)

    def min_degree(self) -> int:
        return min((sum(m) for m in self._coeffs), default=-1)

    def is_zero(self) -> bool:
        return not self._coeffs

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._coeffs.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._coeffs)

    # arithmetic

    def _check(self, other: "Polynomial") -> None:
        if other.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.dim)
        return NotImplemented

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        out = dict(self._coeffs)
        for m, c in other._coeffs.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.dim)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self._coeffs.items()}, self.dim)

    def __sub__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        out: dict[Monomial, float] = defaultdict(float)
        for ma, ca in self._coeffs.items():
            for mb, cb in other._coeffs.items():
                out[_add_exp(ma, mb)] += ca * cb
        return Polynomial(out, self.dim)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(1.0 / float(other))
        return NotImplemented

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = Polynomial.constant(1.0, self.dim)
        base = self
        n = int(n)
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def scale(self, s: float) -> "Polynomial":
        return Polynomial({m: s * c for m, c in self._coeffs.items()}, self.dim)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._coeffs == other._coeffs

    def __hash__(self) -> int:
        return hash((self.dim, frozenset(self._coeffs.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-10) -> bool:
        return (self - other).max_abs_coeff() <= atol

    # calculus

    def diff(self, i: int) -> "Polynomial":
        out = {}
        for m, c in self._coeffs.items():
            if m[i] > 0:
                dm = list(m)
                dm[i] -= 1
                out[tuple(dm)] = c * m[i]
        return Polynomial(out, self.dim)

    def grad(self) -> list["Polynomial"]:
        return [self.diff(i) for i in range(self.dim)]

    def lie_derivative(self, field: Sequence["Polynomial"]) -> "Polynomial":
        """``grad(self) . field``."""
        if len(field) != self.dim:
            raise DimensionError("vector field length does not match polynomial dimension")
        out = Polynomial.zero(self.dim)
        for g, f in zip(self.grad(), field):
            out = out + g * f
        return out

    def compose_affine(self, scale: Sequence[float], shift: Sequence[float]) -> "Polynomial":
        """Polynomial ``q(x) = p(scale * x + shift)`` (elementwise affine)."""
        subs = [Polynomial({tuple(int(j == i) for j in range(self.dim)): scale[i],
                            (0,) * self.dim: shift[i]}, self.dim) for i in range(self.dim)]
        return self.substitute(subs)

    def substitute(self, polys: Sequence["Polynomial"]) -> "Polynomial":
        """Replace variable ``i`` by ``polys[i]``."""
        if len(polys) != self.dim:
            raise DimensionError("substitution needs one polynomial per variable")
        dim = polys[0].dim
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, e: int) -> Polynomial:
            if (i, e) not in cache:
                cache[(i, e)] = polys[i] ** e
            return cache[(i, e)]

        out = Polynomial.zero(dim)
        for m, c in self._coeffs.items():
            term = Polynomial.constant(c, dim)
            for i, e in enumerate(m):
                if e:
                    term = term * power(i, e)
            out = out + term
        return out

    def embed(self, dim: int, index_map: Sequence[int]) -> "Polynomial":
        """Re-express in ``dim`` variables, variable ``i`` becoming ``index_map[i]``."""
        out = {}
        for m, c in self._coeffs.items():
            nm = [0] * dim
            for i, e in enumerate(m):
                nm[index_map[i]] += e
            out[tuple(nm)] = out.get(tuple(nm), 0.0) + c
        return Polynomial(out, dim)

    # evaluation

    def _compile(self):
        if self._compiled is None:
            ms = self.monomials()
            if ms:
                exps = np.array(ms, dtype=np.int64).reshape(len(ms), self.dim)
            else:
                exps = np.zeros((0, self.dim), dtype=np.int64)
            coef = np.array([self._coeffs[m] for m in ms], dtype=float)
            self._compiled = (exps, coef)
        return self._compiled

    def __call__(self, x) -> float | np.ndarray:
        return self.eval(x)

    def eval(self, x) -> float | np.ndarray:
        """Evaluate at one point (shape ``(dim,)``) or many (shape ``(N, dim)``)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[-1] != self.dim:
            raise DimensionError(f"point has {pts.shape[-1]} coordinates, expected {self.dim}")
        exps, coef = self._compile()
        if coef.size == 0:
            vals = np.zeros(pts.shape[0])
        else:
            vals = monomial_matrix(pts, exps) @ coef
        return float(vals[0]) if single else vals

    def eval_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return self.eval(x), np.array([g.eval(x) for g in self.grad()])

    # serialization

    def to_text(self, names: Sequence[str] | None = None) -> str:
        names = list(names) if names is not None else [f"x{i + 1}" for i in range(self.dim)]
        if not self._coeffs:
            return "0"
        parts = []
        for m, c in self.terms():
            factors = []
            for name, e in zip(names, m):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(c)
            if not factors:
                body = _fmt(mag)
            elif mag == 1.0:
                body = "*".join(factors)
            else:
                body = _fmt(mag) + "*" + "*".join(factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    def __repr__(self) -> str:
        return f"Polynomial({self.to_text()!r}, dim={self.dim})"

    def to_json(self) -> dict:
        return {"dim": self.dim,
                "coeffs": {",".join(map(str, m)): c for m, c in self.terms()}}

    @classmethod
    def from_json(cls, data: Mapping) -> "Polynomial":
        dim = int(data["dim"])
        coeffs = {tuple(int(e) for e in k.split(",")): float(v) for k, v in data["coeffs"].items()}
        return cls(coeffs, dim)


def _fmt(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def monomial_matrix(points: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Matrix ``[prod_i x_i^e_ji]`` of shape ``(N, M)`` for exponent rows ``exps``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    exps = np.asarray(exps, dtype=np.int64)
    n_pts, dim = points.shape
    out = np.ones((n_pts, exps.shape[0]))
    if exps.size == 0:
        return out
    for i in range(dim):
        col = exps[:, i]
        top = int(col.max())
        if top == 0:
            continue
        powers = np.ones((n_pts, top + 1))
        for e in range(1, top + 1):
            powers[:, e] = powers[:, e - 1] * points[:, i]
        out *= powers[:, col]
    return out


def poly_arith(a: Polynomial, b: Polynomial | float, op: str) -> Polynomial:
    """Functional form of the ring operations (``add``, ``sub``, ``mul``, ``scale``)."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scale":
        return a.scale(float(b))
    raise ValueError(f"unknown polynomial operation {op!r}")


def poly_eval_grad(p: Polynomial, x) -> tuple[float, np.ndarray]:
    return p.eval_grad(x)


def vector_eval(polys: Sequence[Polynomial], x) -> np.ndarray:
    """Evaluate a polynomial vector field at points of shape ``(N, n)`` or ``(n,)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.array([p.eval(x) for p in polys])
    return np.stack([p.eval(x) for p in polys], axis=-1)


def from_sequence(coeffs: Iterable[tuple[Sequence[int], float]], dim: int) -> Polynomial:
    return Polynomial({tuple(m): c for m, c in coeffs}, dim)


# monomial bases


@dataclass(frozen=True)
class MonomialBasis:
    """Graded-lex ordered list of distinct monomials."""

    monomials: tuple[Monomial, ...]
    dim: int

    def __post_init__(self):
        keys = [grlex_key(m) for m in self.monomials]
        if any(k1 >= k2 for k1, k2 in zip(keys, keys[1:])):
            raise ValueError("basis monomials must be strictly increasing in graded-lex order")
        if any(len(m) != self.dim for m in self.monomials):
            raise DimensionError("basis monomial length does not match dimension")

    def __len__(self) -> int:
        return len(self.monomials)

    def __iter__(self):
        return iter(self.monomials)

    def __getitem__(self, i):
        return self.monomials[i]

    def index(self, m: Monomial) -> int:
        return self.monomials.index(tuple(m))

    @property
    def max_degree(self) -> int:
        return max((sum(m) for m in self.monomials), default=-1)

    def evaluate(self, points) -> np.ndarray:
        return monomial_matrix(points, np.array(self.monomials, dtype=np.int64).reshape(-1, self.dim))

    def without(self, drop: Iterable[Monomial]) -> "MonomialBasis":
        drop = {tuple(m) for m in drop}
        return MonomialBasis(tuple(m for m in self.monomials if m not in drop), self.dim)

    def as_lists(self) -> list[list[int]]:
        return [list(m) for m in self.monomials]


def monomials_of_degree(deg: int, dim: int) -> list[Monomial]:
    out = []
    for cut in itertools.combinations_with_replacement(range(dim), deg):
        m = [0] * dim
        for i in cut:
            m[i] += 1
        out.append(tuple(m))
    return sorted(set(out), key=grlex_key)


def monomial_basis(max_degree: int, dim: int, min_degree: int = 0) -> MonomialBasis:
    """All monomials with ``min_degree <= total degree <= max_degree``."""
    ms: list[Monomial] = []
    for d in range(max(min_degree, 0), max_degree + 1):
        ms.extend(monomials_of_degree(d, dim))
    return MonomialBasis(tuple(ms), dim)


# Gram (square matrix) representation


@dataclass
class GramLinearMap:
    """Linear map from a symmetric ``N x N`` matrix ``Q`` to ``z(x)^T Q z(x)``.

    ``positions[m]`` lists every upper-triangular ``(i, j)`` (``i <= j``) with
    ``z_i z_j = x^m``. Off-diagonal positions stand for the symmetric pair.
    """

    basis: MonomialBasis
    positions: dict[Monomial, list[tuple[int, int]]] = field(default_factory=dict)
    parity_split: bool = False

    @classmethod
    def from_basis(cls, basis: MonomialBasis, parity_split: bool = False) -> "GramLinearMap":
        pos: dict[Monomial, list[tuple[int, int]]] = defaultdict(list)
        ms = basis.monomials
        for i in range(len(ms)):
            for j in range(i, len(ms)):
                if parity_split and (sum(ms[i]) + sum(ms[j])) % 2:
                    continue
                pos[_add_exp(ms[i], ms[j])].append((i, j))
        ordered = {m: pos[m] for m in sorted(pos, key=grlex_key)}
        return cls(basis, ordered, parity_split)

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def monomials(self) -> list[Monomial]:
        return list(self.positions)

    def parity_blocks(self) -> list[list[int]]:
        """Index groups that stay decoupled (one group unless ``parity_split``)."""
        if not self.parity_split:
            return [list(range(self.size))]
        even = [i for i, m in enumerate(self.basis) if sum(m) % 2 == 0]
        odd = [i for i, m in enumerate(self.basis) if sum(m) % 2 == 1]
        return [g for g in (even, odd) if g]

    def reconstruct(self, Q) -> Polynomial:
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (self.size, self.size):
            raise DimensionError(f"Gram matrix shape {Q.shape} does not match basis size {self.size}")
        out = {}
        for m, plist in self.positions.items():
            out[m] = sum(Q[i, j] if i == j else Q[i, j] + Q[j, i] for i, j in plist)
        return Polynomial(out, self.dim)

    def canonical_gram(self, p: Polynomial) -> np.ndarray:
        """A symmetric ``Q`` with ``reconstruct(Q) == p``.

        A coefficient goes to the diagonal when its monomial is a square of a
        basis element, otherwise it is split over the first symmetric pair.
        """
        Q = np.zeros((self.size, self.size))
        for m, c in p.coeffs.items():
            i, j = self.canonical_position(m)
            if i == j:
                Q[i, i] = c
            else:
                Q[i, j] = Q[j, i] = c / 2.0
        return Q

    def canonical_position(self, m: Monomial) -> tuple[int, int]:
        plist = self.positions.get(tuple(m))
        if not plist:
            from .errors import UnrepresentableMonomialError
            raise UnrepresentableMonomialError(tuple(m))
        for i, j in plist:
            if i == j:
                return i, j
        return plist[0]

    def trace_weights(self) -> dict[Monomial, float]:
        """``Tr(canonical_gram(p)) = sum_m w[m] * p[m]``."""
        out = {}
        for m in self.positions:
            i, j = self.canonical_position(m)
            if i == j:
                out[m] = 1.0
        return out

    def quadratic_form(self, Q, x) -> np.ndarray:
        z = self.basis.evaluate(np.atleast_2d(x))
        return np.einsum("ni,ij,nj->n", z, np.asarray(Q, dtype=float), z)


def build_gram_map(target_degree: int, state_dim: int, parity_prune: bool = False,
                   min_degree: int = 0) -> GramLinearMap:
    """Gram map over all monomials of degree ``<= target_degree / 2``.

    ``parity_prune`` drops the cross positions between even- and odd-degree
    basis monomials, which is exact for targets whose monomials all have even
    total degree.
    """
    if target_degree < 0 or target_degree % 2:
        raise ValueError("target degree must be a nonnegative even integer")
    basis = monomial_basis(target_degree // 2, state_dim, min_degree)
    return GramLinearMap.from_basis(basis, parity_split=parity_prune)


def gram_reconstruct(gmap: GramLinearMap, Q) -> Polynomial:
    return gmap.reconstruct(Q)


def dumps_polys(polys: Sequence[Polynomial]) -> str:
    return json.dumps([p.to_json() for p in polys], sort_keys=True)
