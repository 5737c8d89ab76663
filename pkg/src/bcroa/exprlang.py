"""Expression trees for system dynamics.

Expressions are small immutable trees built from :class:`Const`, :class:`Var`,
:class:`Unary`, :class:`Binary` and :class:`Pow`. They are produced by
:func:`parse_expr` from text such as ``"x1^2*x2 + 1 - sqrt(abs(exp(x1)*cos(x1)))"``
and evaluated either exactly at one point (:func:`eval_expr`) or vectorized over
many points (:func:`compile_expr`).

A system file (see :func:`parse_system`) declares state names, a domain box and
the component-wise right-hand side. Each component is split into additive
terms; polynomial terms are collected into ``f`` and the remaining terms into
``g``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (DimensionError, EvaluationDomainError, ExprSyntaxError,
                     SystemValidationError, UnknownIdentifierError)
from .poly import Polynomial

UNARY_OPS = ("neg", "abs", "sqrt", "exp", "sin", "cos", "arccos", "log")
BINARY_OPS = ("add", "sub", "mul", "div")
FUNCTIONS = {"abs": "abs", "sqrt": "sqrt", "exp": "exp", "sin": "sin", "cos": "cos",
             "arccos": "arccos", "acos": "arccos", "log": "log"}
CONSTANTS = {"pi": math.pi}


class Expr:
    """Base class of expression nodes."""

    def __add__(self, other):
        return Binary("add", self, as_expr(other))

    def __radd__(self, other):
        return Binary("add", as_expr(other), self)

    def __sub__(self, other):
        return Binary("sub", self, as_expr(other))

    def __rsub__(self, other):
        return Binary("sub", as_expr(other), self)

    def __mul__(self, other):
        return Binary("mul", self, as_expr(other))

    def __rmul__(self, other):
        return Binary("mul", as_expr(other), self)

    def __truediv__(self, other):
        return Binary("div", self, as_expr(other))

    def __neg__(self):
        return Unary("neg", self)

    def __pow__(self, n: int):
        return Pow(self, n)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary operation {self.op!r}")


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary operation {self.op!r}")


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int) or self.exponent < 0:
            raise ValueError("pow exponents must be nonnegative integers")


Expression = Expr


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to an expression")


def default_names(dim: int) -> list[str]:
    return [f"x{i + 1}" for i in range(dim)]


# tokenizer and parser

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(text: str, line: int, col0: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), col0 + pos))
        pos = m.end()
    tokens.append(_Token("end", "", col0 + len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, names: Sequence[str], line: int, col0: int):
        self.tokens = _tokenize(text, line, col0)
        self.names = {n: i for i, n in enumerate(names)}
        self.line = line
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, msg: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.line, tok.column)

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            self.error("empty expression")
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            if tok.text == ")":
                self.error("unmatched ')'")
            self.error(f"unexpected token {tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-"):
            op = "add" if self.take().text == "+" else "sub"
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/"):
            op = "mul" if self.take().text == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.text == "-":
            self.take()
            return Unary("neg", self.unary())
        if tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text == "^":
            caret = self.take()
            exp_tok = self.peek()
            exp_expr = self.unary()
            if free_vars(exp_expr):
                self.error("exponent must be a constant integer", exp_tok)
            try:
                val = eval_expr(exp_expr, [])
            except EvaluationDomainError:
                self.error("exponent is not a finite number", exp_tok)
            if not float(val).is_integer() or val < 0:
                self.error("exponent must be a nonnegative integer", exp_tok)
            del caret
            return Pow(base, int(val))
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "ident":
            name = tok.text
            if self.peek().text == "(":
                if name not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {name!r}", self.line, tok.column)
                open_tok = self.take()
                arg = self.expr()
                if self.peek().text != ")":
                    self.error("unmatched '('", open_tok)
                self.take()
                return Unary(FUNCTIONS[name], arg)
            if name in self.names:
                return Var(self.names[name])
            if name in CONSTANTS:
                return Const(CONSTANTS[name])
            raise UnknownIdentifierError(f"unknown identifier {name!r}", self.line, tok.column)
        if tok.text == "(":
            if self.peek().kind == "end":
                self.error("unmatched '('", tok)
            inner = self.expr()
            if self.peek().text != ")":
                self.error("unmatched '('", tok)
            self.take()
            return inner
        if tok.kind == "end":
            self.error("unexpected end of expression", tok)
        self.error(f"unexpected token {tok.text!r}", tok)


def parse_expr(text: str, names: Sequence[str] | None = None, line: int = 1,
               column: int = 1) -> Expr:
    """Parse one expression. ``names`` lists state variable names in order."""
    if names is None:
        found = sorted({int(m) for m in re.findall(r"\bx(\d+)\b", text)} or {1})
        names = default_names(max(found))
    return _Parser(text, list(names), line, column).parse()


# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_text(e: Expr, names: Sequence[str] | None = None) -> str:
    """Render an expression so that :func:`parse_expr` reads it back exactly."""
    names = list(names) if names is not None else None

    def name(i: int) -> str:
        return names[i] if names is not None else f"x{i + 1}"

    def go(node: Expr) -> tuple[str, int]:
        if isinstance(node, Const):
            v = node.value
            if not math.isfinite(v):
                raise ValueError("cannot print a non-finite constant")
            s = repr(float(v))
            return (f"({s})", 5) if v < 0 or s.startswith("-") else (s, 5)
        if isinstance(node, Var):
            return name(node.index), 5
        if isinstance(node, Unary):
            if node.op == "neg":
                s, p = go(node.arg)
                return ("-" + (s if p > _PREC["neg"] else f"({s})"), _PREC["neg"])
            s, _ = go(node.arg)
            return f"{node.op}({s})", 5
        if isinstance(node, Pow):
            s, p = go(node.base)
            return ((s if p > _PREC["pow"] else f"({s})") + f"^{node.exponent}", _PREC["pow"])
        if isinstance(node, Binary):
            prec = _PREC[node.op]
            ls, lp = go(node.left)
            rs, rp = go(node.right)
            if lp < prec:
                ls = f"({ls})"
            # left-associative: the right operand needs strictly higher precedence
            if rp <= prec:
                rs = f"({rs})"
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[node.op]
            return f"{ls} {sym} {rs}", prec
        raise TypeError(f"not an expression node: {node!r}")

    return go(e)[0]


# analysis

def free_vars(e: Expr) -> set[int]:
    if isinstance(e, Const):
        return set()
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Unary):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    if isinstance(e, Binary):
        return free_vars(e.left) | free_vars(e.right)
    raise TypeError(f"not an expression node: {e!r}")


def max_var_index(e: Expr) -> int:
    return max(free_vars(e), default=-1)


def is_partial(e: Expr) -> bool:
    """True when the tree contains an operation that is not total on the reals."""
    if isinstance(e, (Const, Var)):
        return False
    if isinstance(e, Unary):
        return e.op in ("sqrt", "log", "arccos") or is_partial(e.arg)
    if isinstance(e, Pow):
        return is_partial(e.base)
    return e.op == "div" or is_partial(e.left) or is_partial(e.right)


def try_to_polynomial(e: Expr, dim: int | None = None) -> Polynomial | None:
    """Expanded polynomial form of ``e``, or ``None`` when ``e`` is not polynomial.

    Constant subtrees are folded, so ``cos(0)*x1`` and ``x1/2`` count as
    polynomial.
    """
    if dim is None:
        dim = max(max_var_index(e) + 1, 1)

    def go(node: Expr) -> Polynomial | None:
        if not free_vars(node):
            try:
                v = eval_expr(node, [0.0] * dim)
            except EvaluationDomainError:
                return None
            return Polynomial.constant(v, dim) if math.isfinite(v) else None
        if isinstance(node, Var):
            if node.index >= dim:
                raise DimensionError(f"variable index {node.index} exceeds dimension {dim}")
            return Polynomial.variable(node.index, dim)
        if isinstance(node, Unary):
            if node.op != "neg":
                return None
            a = go(node.arg)
            return None if a is None else -a
        if isinstance(node, Pow):
            b = go(node.base)
            return None if b is None else b ** node.exponent
        if isinstance(node, Binary):
            a = go(node.left)
            if a is None:
                return None
            if node.op == "div":
                if free_vars(node.right):
                    return None
                d = eval_expr(node.right, [0.0] * dim)
                if d == 0:
                    return None
                return a / d
            b = go(node.right)
            if b is None:
                return None
            return {"add": a + b, "sub": a - b, "mul": a * b}[node.op]
        return None

    return go(e)


def from_polynomial(p: Polynomial) -> Expr:
    """Expression tree for a polynomial (sum of monomial products)."""
    out: Expr | None = None
    for m, c in p.terms():
        term: Expr = Const(abs(c))
        for i, k in enumerate(m):
            if k:
                factor = Var(i) if k == 1 else Pow(Var(i), k)
                term = factor if (isinstance(term, Const) and term.value == 1.0) else term * factor
        if out is None:
            out = -term if c < 0 else term
        else:
            out = out - term if c < 0 else out + term
    return out if out is not None else Const(0.0)


def substitute(e: Expr, mapping: dict[int, Expr]) -> Expr:
    """Replace variables by expressions."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.index, e)
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exponent)
    return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))


def additive_terms(e: Expr) -> list[Expr]:
    """Flatten ``e`` into signed additive terms whose sum equals ``e``."""
    out: list[Expr] = []

    def go(node: Expr, sign: int):
        if isinstance(node, Binary) and node.op in ("add", "sub"):
            go(node.left, sign)
            go(node.right, sign if node.op == "add" else -sign)
        elif isinstance(node, Unary) and node.op == "neg":
            go(node.arg, -sign)
        else:
            out.append(node if sign > 0 else Unary("neg", node))

    go(e, 1)
    return out


def sum_exprs(terms: Sequence[Expr]) -> Expr:
    if not terms:
        return Const(0.0)
    out = terms[0]
    for t in terms[1:]:
        if isinstance(t, Unary) and t.op == "neg":
            out = Binary("sub", out, t.arg)
        else:
            out = Binary("add", out, t)
    return out


def is_zero_expr(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# evaluation

def _domain_fail(op: str, node: Expr, value: float):
    raise EvaluationDomainError(f"{op} undefined at argument {value!r}", to_text(node))


def eval_expr(e: Expr, x: Sequence[float]) -> float:
    """Exact scalar evaluation at ``x``."""

    def go(node: Expr) -> float:
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Var):
            if node.index >= len(x):
                raise DimensionError(f"state has {len(x)} entries, expression uses x{node.index + 1}")
            return float(x[node.index])
        if isinstance(node, Unary):
            a = go(node.arg)
            op = node.op
            if op == "neg":
                return -a
            if op == "abs":
                return abs(a)
            if op == "sqrt":
                if a < 0:
                    _domain_fail("sqrt", node, a)
                return math.sqrt(a)
            if op == "exp":
                try:
                    return math.exp(a)
                except OverflowError:
                    _domain_fail("exp", node, a)
            if op == "sin":
                return math.sin(a)
            if op == "cos":
                return math.cos(a)
            if op == "arccos":
                if not -1.0 <= a <= 1.0:
                    _domain_fail("arccos", node, a)
                return math.acos(a)
            if op == "log":
                if a <= 0:
                    _domain_fail("log", node, a)
                return math.log(a)
        if isinstance(node, Pow):
            return go(node.base) ** node.exponent
        if isinstance(node, Binary):
            a, b = go(node.left), go(node.right)
            if node.op == "add":
                return a + b
            if node.op == "sub":
                return a - b
            if node.op == "mul":
                return a * b
            if b == 0:
                _domain_fail("division", node, b)
            return a / b
        raise TypeError(f"not an expression node: {node!r}")

    return float(go(e))


def compile_expr(e: Expr, check: bool = True) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized evaluator ``F(X)`` for points ``X`` of shape ``(N, n)``.

    With ``check`` set, a partial operation evaluated off its domain at any
    point raises :class:`EvaluationDomainError` naming the subtree.
    """

    def build(node: Expr):
        if isinstance(node, Const):
            v = node.value
            return lambda X: np.full(X.shape[0], v)
        if isinstance(node, Var):
            i = node.index
            return lambda X: X[:, i].astype(float)
        if isinstance(node, Pow):
            b, k = build(node.base), node.exponent
            return lambda X: b(X) ** k
        if isinstance(node, Unary):
            a = build(node.arg)
            op = node.op
            if op == "neg":
                return lambda X: -a(X)
            simple = {"abs": np.abs, "exp": np.exp, "sin": np.sin, "cos": np.cos}
            if op in simple:
                fn = simple[op]
                return lambda X: fn(a(X))
            guard = {"sqrt": (np.sqrt, lambda v: v < 0),
                     "log": (np.log, lambda v: v <= 0),
                     "arccos": (np.arccos, lambda v: np.abs(v) > 1)}[op]
            fn, bad = guard

            def f(X, a=a, fn=fn, bad=bad, node=node):
                v = a(X)
                mask = bad(v)
                if check and np.any(mask):
                    _domain_fail(node.op, node, float(v[np.argmax(mask)]))
                with np.errstate(invalid="ignore", divide="ignore"):
                    return fn(v)
            return f
        if isinstance(node, Binary):
            l, r = build(node.left), build(node.right)
            if node.op == "add":
                return lambda X: l(X) + r(X)
            if node.op == "sub":
                return lambda X: l(X) - r(X)
            if node.op == "mul":
                return lambda X: l(X) * r(X)

            def d(X, node=node):
                den = r(X)
                if check and np.any(den == 0):
                    _domain_fail("division", node, 0.0)
                with np.errstate(invalid="ignore", divide="ignore"):
                    return l(X) / den
            return d
        raise TypeError(f"not an expression node: {node!r}")

    fn = build(e)

    def evaluate(X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        pts = np.atleast_2d(X)
        out = fn(pts)
        return float(out[0]) if single else out

    return evaluate


# system files

@dataclass
class SystemDefinition:
    """Parsed dynamics ``xdot = f(x) + g(x) + d_true(x)`` on a domain box.

    ``f`` holds the polynomial part, ``g`` the known non-polynomial part and
    ``d_true`` the hidden disturbance used only by simulation.
    """

    state_dim: int
    names: list[str]
    f: list[Polynomial]
    g: list[Expr]
    d_true: list[Expr]
    domain: list[tuple[float, float]]
    equilibrium: tuple[float, ...] = ()
    original_equilibrium: tuple[float, ...] = ()
    noise_sigma_n: float = 0.0
    rkhs_bound_cg: float = 1.0
    source_text: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.equilibrium:
            self.equilibrium = (0.0,) * self.state_dim
        if not self.original_equilibrium:
            self.original_equilibrium = (0.0,) * self.state_dim

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.domain])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.domain])

    def _compiled(self, key: str, exprs: Sequence[Expr]):
        if key not in self._cache:
            self._cache[key] = [compile_expr(e) for e in exprs]
        return self._cache[key]

    def known_rhs(self, X) -> np.ndarray:
        """``f + g`` at points of shape ``(N, n)`` (or one point)."""
        X = np.asarray(X, dtype=float)
        pts = np.atleast_2d(X)
        gs = self._compiled("g", self.g)
        out = np.stack([p.eval(pts) + gfn(pts) for p, gfn in zip(self.f, gs)], axis=-1)
        return out[0] if X.ndim == 1 else out

    def true_rhs(self, X) -> np.ndarray:
        """``f + g + d_true``; the ground truth used for simulation."""
        X = np.asarray(X, dtype=float)
        pts = np.atleast_2d(X)
        ds = self._compiled("d", self.d_true)
        out = self.known_rhs(pts) + np.stack([dfn(pts) for dfn in ds], axis=-1)
        return out[0] if X.ndim == 1 else out

    def to_dict(self) -> dict:
        return {
            "states": self.names,
            "domain": [list(b) for b in self.domain],
            "f": [p.to_text(self.names) for p in self.f],
            "g": [to_text(e, self.names) for e in self.g],
            "equilibrium_shift": list(self.original_equilibrium),
            "noise_sigma_n": self.noise_sigma_n,
            "rkhs_bound_cg": self.rkhs_bound_cg,
        }


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_DOMAIN_RE = re.compile(rf"^\s*([A-Za-z_][A-Za-z_0-9]*)\s+in\s+\[\s*({_NUM})\s*,\s*({_NUM})\s*\]\s*$")
_KEYS = ("states", "domain", "f", "g", "d_true", "equilibrium", "noise_sigma_n", "rkhs_bound_cg")


def _split_components(value: str, col0: int) -> list[tuple[str, int]]:
    parts = []
    start = 0
    for i, ch in enumerate(value + ";"):
        if ch == ";":
            parts.append((value[start:i], col0 + start))
            start = i + 1
    return parts


def parse_system(text: str) -> SystemDefinition:
    """Parse and validate a system-definition document.

    Keys: ``states``, ``domain``, ``f``, ``g`` (optional), ``d_true`` (optional,
    defaults to zero), ``equilibrium`` (optional), ``noise_sigma_n``,
    ``rkhs_bound_cg``. Vector components are separated by ``;`` and ``#``
    starts a comment.
    """
    entries: dict[str, tuple[str, int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if ":" not in line:
            raise ExprSyntaxError("expected 'key: value'", lineno, 1)
        key, value = line.split(":", 1)
        key = key.strip()
        if key not in _KEYS:
            raise UnknownIdentifierError(f"unknown key {key!r}", lineno, raw.index(key) + 1)
        if key in entries:
            raise SystemValidationError(f"duplicate key {key!r} on line {lineno}")
        entries[key] = (value, lineno, len(key) + raw.index(key) + 2)

    for req in ("states", "domain", "f"):
        if req not in entries:
            raise SystemValidationError(f"missing required key {req!r}")

    names = entries["states"][0].split()
    if not names or len(set(names)) != len(names):
        raise SystemValidationError("states must list distinct variable names")
    for nm in names:
        if nm in FUNCTIONS or nm in CONSTANTS or not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", nm):
            raise SystemValidationError(f"invalid state name {nm!r}")
    n = len(names)

    value, lineno, _ = entries["domain"]
    bounds: dict[str, tuple[float, float]] = {}
    for part in value.split(";"):
        if not part.strip():
            continue
        m = _DOMAIN_RE.match(part)
        if m is None:
            raise ExprSyntaxError(f"bad domain entry {part.strip()!r}", lineno, 1)
        nm, a, b = m.group(1), float(m.group(2)), float(m.group(3))
        if nm not in names:
            raise UnknownIdentifierError(f"unknown state {nm!r} in domain", lineno, 1)
        if not a < b:
            raise SystemValidationError(f"degenerate domain interval for {nm}: [{a}, {b}]")
        bounds[nm] = (a, b)
    if set(bounds) != set(names):
        missing = [nm for nm in names if nm not in bounds]
        raise DimensionError(f"domain missing states {missing}")
    domain = [bounds[nm] for nm in names]

    def vector(key: str, required: bool) -> list[Expr]:
        if key not in entries:
            if required:
                raise SystemValidationError(f"missing required key {key!r}")
            return [Const(0.0)] * n
        value, lineno, col0 = entries[key]
        comps = _split_components(value, col0)
        if len(comps) != n:
            raise DimensionError(f"{key} has {len(comps)} components, expected {n} (line {lineno})")
        return [parse_expr(s, names, lineno, c) for s, c in comps]

    f_raw = vector("f", True)
    g_raw = vector("g", False)
    d_raw = vector("d_true", False)

    eq = (0.0,) * n
    if "equilibrium" in entries:
        value, lineno, _ = entries["equilibrium"]
        vals = value.replace(";", " ").replace(",", " ").split()
        if len(vals) != n:
            raise DimensionError(f"equilibrium has {len(vals)} entries, expected {n}")
        eq = tuple(float(v) for v in vals)

    def scalar(key: str, default: float, positive: bool) -> float:
        if key not in entries:
            return default
        try:
            v = float(entries[key][0].strip())
        except ValueError:
            raise ExprSyntaxError(f"{key} must be a number", entries[key][1], 1) from None
        if v < 0 or (positive and v == 0):
            raise SystemValidationError(f"{key} must be {'positive' if positive else 'nonnegative'}")
        return v

    sigma_n = scalar("noise_sigma_n", 0.0, False)
    cg = scalar("rkhs_bound_cg", 1.0, True)

    # shift the equilibrium to the origin: x = z + eq
    if any(eq):
        shift = {i: Binary("add", Var(i), Const(eq[i])) for i in range(n)}
        f_raw = [substitute(e, shift) for e in f_raw]
        g_raw = [substitute(e, shift) for e in g_raw]
        d_raw = [substitute(e, shift) for e in d_raw]
        domain = [(a - e, b - e) for (a, b), e in zip(domain, eq)]

    f_polys: list[Polynomial] = []
    g_exprs: list[Expr] = []
    for fe, ge in zip(f_raw, g_raw):
        poly = Polynomial.zero(n)
        rest: list[Expr] = []
        for term in additive_terms(fe) + additive_terms(ge):
            p = try_to_polynomial(term, n)
            if p is None:
                rest.append(term)
            else:
                poly = poly + p
        f_polys.append(poly)
        g_exprs.append(sum_exprs(rest))
    d_exprs = [Const(0.0) if try_to_polynomial(e, n) == Polynomial.zero(n) else e for e in d_raw]

    for (a, b) in domain:
        if not a < 0 < b:
            raise SystemValidationError("domain box must contain the equilibrium strictly")

    origin = [0.0] * n
    for i in range(n):
        try:
            r = f_polys[i].eval(np.zeros(n)) + eval_expr(g_exprs[i], origin) + eval_expr(d_exprs[i], origin)
        except EvaluationDomainError as exc:
            raise SystemValidationError(f"component {i + 1} is undefined at the equilibrium: {exc}") from None
        if abs(r) > 1e-9:
            raise SystemValidationError(
                f"equilibrium residual {r:.3e} in component {i + 1} exceeds 1e-9")

    return SystemDefinition(state_dim=n, names=names, f=f_polys, g=g_exprs, d_true=d_exprs,
                            domain=domain, equilibrium=(0.0,) * n, original_equilibrium=eq,
                            noise_sigma_n=sigma_n, rkhs_bound_cg=cg, source_text=text)


def load_system(path) -> SystemDefinition:
    with open(path, encoding="utf-8") as fh:
        return parse_system(fh.read())
