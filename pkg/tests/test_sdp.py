import numpy as np
import pytest

from bcroa.errors import SdpFormatError
from bcroa.sdp import SdpProblem, export_sdpa, import_sdpa, solve

from sdp_oracles import kkt_residual, random_feasible, x_equals_one

X1_REFERENCE = "1\n1\n2\n1\n0 1 1 2 -1\n1 1 1 1 1\n1 1 2 2 1\n"


def test_x_equals_one():
    sol = solve(x_equals_one())
    assert sol.status == "optimal"
    assert abs(sol.y[0] - 1.0) <= 1e-6
    assert abs(sol.dual_objective - 1.0) <= 1e-6


def test_zero_variable_identity_problem():
    p = SdpProblem((1,), np.zeros(0), {(0, 0): -np.eye(1)})
    assert solve(p).status == "optimal"


def test_negative_diagonal_is_infeasible():
    # <E11, X> = -1 with X psd has no solution
    E = np.zeros((2, 2))
    E[0, 0] = 1.0
    p = SdpProblem((2,), np.array([-1.0]), {(1, 0): E})
    sol = solve(p)
    assert sol.status == "infeasible"
    assert sol.certificate_norm is not None


def test_infeasible_lmi_reported_unbounded():
    # y * I - diag(1, -1)... forced: Z = -I must be psd
    p = SdpProblem((2,), np.zeros(1), {(0, 0): np.eye(2), (1, 0): np.diag([1.0, -1.0])})
    sol = solve(p)
    assert sol.status == "unbounded"
    assert sol.lmi_infeasible


def test_random_problems_reach_tolerance():
    rng = np.random.default_rng(7)
    for _ in range(25):
        p = random_feasible(rng)
        sol = solve(p)
        assert sol.status == "optimal"
        assert sol.gap <= 1e-6
        assert kkt_residual(p, sol) <= 1e-7
        assert min(np.linalg.eigvalsh(X).min() for X in sol.X) >= -1e-7


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = random_feasible(rng, 8, 10)
        perm = rng.permutation(p.m)
        a, b = solve(p), solve(p.permuted(perm))
        assert abs(a.dual_objective - b.dual_objective) <= 1e-8 * (1 + abs(a.dual_objective))


def test_export_reference_text():
    assert export_sdpa(x_equals_one()) == X1_REFERENCE


def test_export_empty_problem():
    p = SdpProblem((1,), np.zeros(0), {})
    assert export_sdpa(p) == "0\n1\n1\n\n"


def test_roundtrip_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = random_feasible(rng, 10, 15)
        q = import_sdpa(export_sdpa(p))
        assert p.structurally_equal(q)
        assert export_sdpa(q) == export_sdpa(p)


def test_import_accepts_braces_and_comments():
    text = '"a comment\n1 =mdim\n1 =nblock\n{2}\n{1.0}\n0 1 1 2 -1\n1 1 1 1 1\n1 1 2 2 1\n'
    assert import_sdpa(text).structurally_equal(x_equals_one())


@pytest.mark.parametrize("text", ["1\n1\n", "1\n1\n-3\n1\n", "1\n1\n2\n1\n0 1 3 1 1\n",
                                  "1\n1\n2\n1\n0 1 1\n"])
def test_import_rejects_malformed(text):
    with pytest.raises(SdpFormatError):
        import_sdpa(text)


def test_duplicate_rows_rejected():
    p = SdpProblem((1,), np.zeros(2), {(1, 0): np.eye(1), (2, 0): np.eye(1)})
    with pytest.raises(SdpFormatError):
        p.validate()
