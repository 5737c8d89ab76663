import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bcroa.errors import UnrepresentableMonomialError
from bcroa.poly import (GramLinearMap, Polynomial, build_gram_map, gram_reconstruct,
                        monomial_basis)

coef = st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 3))


@st.composite
def polys(draw, dim=2, max_deg=3):
    terms = draw(st.dictionaries(st.tuples(*[st.integers(0, max_deg)] * dim), coef, max_size=6))
    return Polynomial(terms, dim)


@settings(max_examples=60, deadline=None)
@given(polys(), polys(), st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_arithmetic_matches_evaluation(p, q, x):
    x = np.array(x)
    assert np.isclose((p * q).eval(x), p.eval(x) * q.eval(x), atol=1e-8, rtol=1e-9)
    assert np.isclose((p + q).eval(x), p.eval(x) + q.eval(x), atol=1e-9)
    assert np.isclose((p - q).eval(x), p.eval(x) - q.eval(x), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(polys(), polys(), polys())
def test_ring_laws(p, q, r):
    assert (p * (q + r)).allclose(p * q + p * r, atol=1e-9)
    assert (p * q).allclose(q * p)


@settings(max_examples=40, deadline=None)
@given(polys(), st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_gradient_against_finite_difference(p, x):
    x = np.array(x)
    _, g = p.eval_grad(x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (p.eval(x + e) - p.eval(x - e)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-4 * max(1.0, abs(g[i]))


def test_display_order():
    x1, x2 = Polynomial.variables(2)
    p = (x1 + x2) ** 2 - 3 * x2 + 1
    assert p.to_text(["x1", "x2"]) == "x1^2 + 2*x1*x2 + x2^2 - 3*x2 + 1"


def test_degree_and_zero():
    assert Polynomial.zero(2).degree == -1
    assert Polynomial.constant(3.0, 2).degree == 0
    assert Polynomial({(2, 1): 1.0}, 2).degree == 3


def test_json_roundtrip():
    p = Polynomial({(2, 1): 0.1, (0, 0): -3.0, (0, 4): 1e-7}, 2)
    assert Polynomial.from_json(p.to_json()) == p


def test_lie_derivative():
    x1, x2 = Polynomial.variables(2)
    V = x1 ** 2 + x2 ** 2
    f = [-x1, -x2]
    assert V.lie_derivative(f) == -2 * x1 ** 2 - 2 * x2 ** 2


def test_gram_reconstruct_x_plus_one_squared():
    gmap = GramLinearMap.from_basis(monomial_basis(1, 1))
    Q = np.array([[1.0, 1.0], [1.0, 1.0]])
    p = gram_reconstruct(gmap, Q)
    assert p == Polynomial({(2,): 1.0, (1,): 2.0, (0,): 1.0}, 1)


def test_gram_map_odd_degree_rejected():
    with pytest.raises(ValueError):
        build_gram_map(3, 2)


def test_canonical_gram_reconstructs(rng):
    gmap = build_gram_map(4, 2)
    coeffs = {m: float(rng.normal()) for m in gmap.monomials()}
    p = Polynomial(coeffs, 2)
    assert gram_reconstruct(gmap, gmap.canonical_gram(p)).allclose(p, atol=1e-12)


def test_unrepresentable_monomial():
    gmap = build_gram_map(2, 2)
    with pytest.raises(UnrepresentableMonomialError):
        gmap.canonical_position((3, 0))


def test_quadratic_form_matches_reconstruction(rng):
    gmap = build_gram_map(4, 2)
    A = rng.normal(size=(gmap.size, gmap.size))
    Q = A + A.T
    X = rng.uniform(-1, 1, (20, 2))
    np.testing.assert_allclose(gmap.quadratic_form(Q, X), gram_reconstruct(gmap, Q).eval(X), atol=1e-10)
