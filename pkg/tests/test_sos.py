import math

import numpy as np
import pytest

from bcroa.errors import BcroaError, SosInfeasibleError
from bcroa.poly import Polynomial
from bcroa.roa import parse_polynomial
from bcroa.sos import (PSD_TOL, RESIDUAL_TOL, AffinePoly, SosProgram, alternate, audit_gram,
                       canonical_trace, check_positive_definite, lie, multiplier_degree,
                       sos_feasibility, step1_max_sublevel, step2_multipliers, step3_enlarge)

X = ["x1", "x2"]


def P(text, names=X):
    return parse_polynomial(text, names)


def assert_sound(cert):
    for g in cert.grams:
        scale = max(1.0, g.target.max_abs_coeff())
        assert g.residual <= RESIDUAL_TOL * scale, g.name
        assert g.min_eig >= -PSD_TOL, g.name


def test_square_is_feasible():
    ok, res = sos_feasibility(P("(x+1)^2", ["x"]))
    assert ok
    assert_sound(res.certificate())


def test_negative_square_is_infeasible():
    ok, _ = sos_feasibility(P("-x^2", ["x"]))
    assert not ok


def test_motzkin_is_infeasible():
    ok, res = sos_feasibility(P("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1"))
    assert not ok
    assert res.margin is None or res.margin < 0


def test_sum_of_squares_certificate_reconstructs():
    p = P("(x1 - 2*x2)^2 + (x1*x2 + 1)^2 + x2^4")
    ok, res = sos_feasibility(p)
    assert ok
    cert = res.certificate()
    assert_sound(cert)
    g = cert.grams[0]
    again = audit_gram("again", p, g.basis, g.gram)
    assert again.residual <= 1e-8 * max(1.0, p.max_abs_coeff())


def test_audit_detects_a_wrong_gram():
    p = P("x^2 + 1", ["x"])
    ok, res = sos_feasibility(p)
    g = res.certificate().grams[0]
    bad = audit_gram("bad", p + P("x", ["x"]), g.basis, g.gram)
    assert bad.residual >= 0.5


def test_positive_definite_screen():
    assert check_positive_definite(P("x1^2 + x2^2"))[0]
    assert not check_positive_definite(P("x1^2 + x2^2 + 1"))[0]
    assert not check_positive_definite(P("x1^2 - x2^2"))[0]


def test_multiplier_degree_is_even_and_dominates():
    for req, dh, dr in [(2, 4, 4), (1, 4, 5), (0, 2, 6), (2, 0, 3)]:
        d = multiplier_degree(req, dh, dr)
        assert d % 2 == 0 and d >= req and d + dh >= dr and (d + dh) % 2 == 0
    with pytest.raises(BcroaError):
        multiplier_degree(2, 3, 4)


def test_stable_linear_hits_c_max():
    r = step1_max_sublevel(P("x^2", ["x"]), [P("-x", ["x"])], c_max=10.0)
    assert r.c_star == 10.0
    assert r.verified
    assert_sound(r.certificate)


def test_sublevel_bisection_matches_analytic_bound():
    # xdot = -x + x^3, V = x^2: Vdot < 0 exactly for x^2 < 1
    r = step1_max_sublevel(P("x^2", ["x"]), [P("-x + x^3", ["x"])], c_max=2.0, tol=1e-3)
    assert r.verified
    assert 0.9 <= r.c_star <= 1.0 + 2e-3


def test_sublevel_rejects_bad_candidate():
    with pytest.raises(BcroaError):
        step1_max_sublevel(P("x1^2 - x2^2"), [P("-x1"), P("-x2")])


def test_sublevel_unstable_is_infeasible():
    with pytest.raises(SosInfeasibleError):
        step1_max_sublevel(P("x^2", ["x"]), [P("x", ["x"])], c_max=1.0)


LINEAR = [P("-x1"), P("-x2")]
VQ = P("x1^2 + x2^2")


def test_step2_finds_multipliers_for_a_valid_barrier():
    s2 = step2_multipliers(VQ, P("1 - x1^2 - x2^2"), LINEAR)
    assert s2.feasible
    assert_sound(s2.certificate)


def test_step2_rejects_region_with_unstable_part():
    # x1dot = x1 outward everywhere: no barrier containing the origin certifies
    s2 = step2_multipliers(VQ, P("1 - x1^2 - x2^2"), [P("x1"), P("-x2")])
    assert not s2.feasible


def test_step3_certificate_is_sound_and_enlarges():
    h0 = P("1 - x1^2 - x2^2")
    s2 = step2_multipliers(VQ, h0, LINEAR)
    s3 = step3_enlarge(4, s2.L1, s2.L2, VQ, LINEAR, trace_cap=50.0)
    assert s3.feasible
    assert_sound(s3.certificate)
    assert s3.trace >= canonical_trace(h0, 4) - 1e-9
    assert s3.h.coeff((0, 0)) >= 1e-3 - 1e-9


NONLIN = [P("-x1 + x2"), P("0.1*x1 - 2*x2 - x1^2 - 0.1*x1^3")]


def test_alternation_trace_is_monotone_and_certificates_sound():
    V = P("x1^2 + x2^2")
    s1 = step1_max_sublevel(V, NONLIN, c_max=5.0)
    h0 = Polynomial.constant(s1.c_star, 2) - V
    alt = alternate(V, NONLIN, h0, max_rounds=4, c_contain=s1.c_star)
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(alt.trace_history, alt.trace_history[1:]))
    for entry in alt.certificates:
        if entry["feasible"]:
            assert entry["residual"] <= 1e-6
            assert entry["min_eig"] >= -PSD_TOL
    # the final barrier is certified by the last multipliers
    s2 = step2_multipliers(V, alt.h, NONLIN)
    assert s2.feasible


def test_alternation_infinite_eps_stops_after_one_round():
    h0 = P("1 - x1^2 - x2^2")
    alt = alternate(VQ, LINEAR, h0, eps=math.inf, max_rounds=5, trace_cap=50.0)
    assert alt.rounds == 1
    assert alt.stop_reason in ("converged", "trace_cap")


def test_alternation_rejects_uncertifiable_start():
    with pytest.raises(SosInfeasibleError):
        alternate(VQ, [P("x1"), P("-x2")], P("1 - x1^2 - x2^2"), max_rounds=2)


def test_program_compile_is_idempotent():
    prog = SosProgram(1)
    prog.add_sos(AffinePoly.from_poly(P("x^2 + 1", ["x"])), "t")
    a, b = prog.compile(), prog.compile()
    assert a.m == b.m and a.block_sizes == b.block_sizes


def test_lie_derivative_matches_finite_difference():
    p = P("x1^3*x2 - x2^2")
    f = [P("x2"), P("-x1 - x2")]
    d = lie(p, f)
    x = np.array([0.3, -0.7])
    h = 1e-6
    fx = np.array([q(x) for q in f])
    fd = (p(x + h * fx) - p(x - h * fx)) / (2 * h)
    assert abs(d(x) - fd) <= 1e-6
