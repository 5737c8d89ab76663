import math

import numpy as np
import pytest

from bcroa.errors import (DimensionError, EvaluationDomainError, ExprSyntaxError,
                          SystemValidationError, UnknownIdentifierError)
from bcroa.exprlang import (compile_expr, eval_expr, free_vars, parse_expr, parse_system,
                            to_text, try_to_polynomial, load_system)
from bcroa.poly import Polynomial

from conftest import fixture_path

NAMES = ["x1", "x2"]


def test_cheb_term_free_vars():
    e = parse_expr("sqrt(abs(exp(x1)*cos(x1)))", NAMES)
    assert free_vars(e) == {0}
    assert try_to_polynomial(e, 2) is None


def test_polynomial_recognized():
    p = try_to_polynomial(parse_expr("x1^2*x2 + 1", NAMES), 2)
    assert p == Polynomial({(2, 1): 1.0, (0, 0): 1.0}, 2)


def test_unclosed_paren_position():
    with pytest.raises(ExprSyntaxError) as exc:
        parse_expr("(", NAMES)
    assert (exc.value.line, exc.value.column) == (1, 1)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse_expr("x3 + 1", NAMES)


@pytest.mark.parametrize("text", ["x1^", "x1 +* x2", "x1^x2", "x1^(-1)", "2..3", "sin x1"])
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError):
        parse_expr(text, NAMES)


def test_eval_basics():
    assert eval_expr(parse_expr("cos(0)"), []) == 1.0
    assert eval_expr(parse_expr("sqrt(abs(exp(x1)*cos(x1)))", NAMES), [0.0, 0.0]) == 1.0
    assert eval_expr(parse_expr("-x1^2", NAMES), [3.0, 0.0]) == -9.0
    assert eval_expr(parse_expr("2^3^2"), []) == 2.0 ** 9


def test_domain_error_names_subtree():
    e = parse_expr("1 + log(x1 - 1)", NAMES)
    with pytest.raises(EvaluationDomainError) as exc:
        eval_expr(e, [0.5, 0.0])
    assert "log" in str(exc.value)


def test_roundtrip_text(rng):
    srcs = ["-x1^2 - (x2 - 1)*x1", "sqrt(abs(exp(x1)*cos(x1)))", "x1/(2 + x2^2)", "-(-x1)^3",
            "arccos(x1/3) + sin(x2)^2"]
    for s in srcs:
        e = parse_expr(s, NAMES)
        e2 = parse_expr(to_text(e, NAMES), NAMES)
        X = rng.uniform(-1, 1, (50, 2))
        np.testing.assert_allclose(compile_expr(e)(X), compile_expr(e2)(X), rtol=0, atol=1e-14)


def test_compiled_matches_scalar(rng):
    e = parse_expr("x1^2*x2 + 1 - sqrt(abs(exp(x1)*cos(x1)))", NAMES)
    X = rng.uniform(-2, 2, (200, 2))
    vec = compile_expr(e)(X)
    ref = np.array([eval_expr(e, x) for x in X])
    np.testing.assert_allclose(vec, ref, rtol=1e-14, atol=1e-14)


def test_parse_system_routing():
    s = load_system(fixture_path("ex4.sys"))
    assert s.state_dim == 2
    assert s.f[1] == Polynomial({(2, 1): 1.0, (0, 0): 1.0}, 2)
    assert free_vars(s.g[1]) == {0}
    assert s.noise_sigma_n == 0.01
    assert np.allclose(s.true_rhs(np.zeros(2)), 0.0)


def test_parse_system_defaults_and_shift():
    s = parse_system("states: x y\ndomain: x in [0, 4]; y in [-1, 1]\nf: -(x - 2) ; -y\n"
                     "equilibrium: 2, 0\n")
    assert s.domain == [(-2.0, 2.0), (-1.0, 1.0)]
    assert s.f[0] == Polynomial({(1, 0): -1.0}, 2)
    assert s.noise_sigma_n == 0.0 and s.rkhs_bound_cg == 1.0


def test_parse_system_rejects_bad_equilibrium():
    with pytest.raises(SystemValidationError):
        parse_system("states: x\ndomain: x in [-1, 1]\nf: 1 - x^2\n")


def test_parse_system_dimension_mismatch():
    with pytest.raises(DimensionError):
        parse_system("states: x y\ndomain: x in [-1, 1]; y in [-1, 1]\nf: -x\n")


def test_all_fixtures_load():
    for name in ("ex1.sys", "ex3.sys", "ex4.sys", "ex5.sys"):
        s = load_system(fixture_path(name))
        assert math.isclose(float(np.abs(s.true_rhs(np.zeros(s.state_dim))).max()), 0.0, abs_tol=1e-9)
