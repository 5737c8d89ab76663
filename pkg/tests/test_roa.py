import json
import math
import warnings

import numpy as np
import pytest

from bcroa.cheb import approximate_system
from bcroa.config import RunConfig
from bcroa.errors import BcroaError, DimensionError
from bcroa.exprlang import load_system, parse_system
from bcroa.gp import Dataset, GpConfig, fit
from bcroa.poly import Polynomial
from bcroa.roa import (assemble_learned_system, grid_points, parse_polynomial, region_ops,
                       run_algorithm1, theorem2_bounds, validate_certificate)
from bcroa.sos import alternate, step1_max_sublevel

from conftest import fixture_path

X = ["x1", "x2"]
BOX = [(-2.0, 2.0), (-2.0, 2.0)]


def P(text):
    return parse_polynomial(text, X)


def test_assemble_matches_componentwise_sum():
    s = load_system(fixture_path("ex3.sys"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = approximate_system(s, 4)
    rng = np.random.default_rng(0)
    Xd = rng.uniform(-2, 2, size=(40, 2))
    model = fit(Dataset(Xd, rng.normal(size=(40, 2)) * 0.1), GpConfig(include_constant=False), box=s.domain)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        learned = assemble_learned_system(a, model)
    Xq = rng.uniform(-2, 2, size=(100, 2))
    direct = a.eval(Xq) + model.predict(Xq)[0]
    got = np.stack([p.eval(Xq) for p in learned], axis=1)
    assert np.max(np.abs(got - direct)) <= 1e-9


def test_assemble_partial_outputs_and_dimension_check():
    s = parse_system("states: x1 x2\ndomain: x1 in [-1, 1]; x2 in [-1, 1]\nf: -x1 ; -x2\n")
    a = approximate_system(s, 4)
    model = fit(Dataset(np.array([[0.5, 0.5]]), np.array([[1.0]])), GpConfig(include_constant=False))
    learned = assemble_learned_system(a, model, outputs=[1])
    assert learned[0] == a.polynomial_field()[0]
    with pytest.raises(DimensionError):
        assemble_learned_system(a, model, outputs=[0, 1])
    m3 = fit(Dataset(np.zeros((1, 3)), np.zeros((1, 2))), GpConfig())
    with pytest.raises(DimensionError):
        assemble_learned_system(a, m3)


def test_region_ops_single_and_opposite():
    h = P("1 - x1^2 - x2^2")
    one = region_ops([h], BOX, 50)
    assert np.array_equal(one.union, one.intersection)
    assert np.array_equal(one.union, one.masks[0])
    pair = region_ops([h, -h], BOX, 50)
    # only exact zeros of h could be shared
    pts = grid_points(BOX, 50)
    zeros = np.sum(h.eval(pts) == 0)
    assert pair.intersection.sum() == zeros


def test_region_ops_matches_pointwise_oracle():
    hs = [P("1 - x1^2 - 2*x2^2"), P("0.5 - (x1 - 0.3)^2 - x2^2 + x1*x2")]
    rm = region_ops(hs, BOX, 37)
    axes = np.linspace(-2, 2, 37)
    for i, a in enumerate(axes):
        for j, b in enumerate(axes):
            vals = [h(np.array([a, b])) >= 0 for h in hs]
            assert rm.masks[0][i, j] == vals[0] and rm.masks[1][i, j] == vals[1]
            assert rm.union[i, j] == any(vals) and rm.intersection[i, j] == all(vals)
    cell = (4 / 36) ** 2
    assert rm.union_area == pytest.approx(rm.union.sum() * cell)


def test_region_ops_resolution_check():
    with pytest.raises(BcroaError):
        region_ops([P("1")], BOX, 1)


def test_theorem2_bounds():
    assert theorem2_bounds([(0.05, 1), (0.03, 1)]) == pytest.approx((0.95, 0.97), abs=1e-15)
    u, i = theorem2_bounds([(0.2, 4)])
    assert u == i
    assert theorem2_bounds([(0.1, 2), (0.1, 3)]) == pytest.approx((0.729, 0.81))
    with pytest.raises(BcroaError):
        theorem2_bounds([])


NONLIN = [P("-x1 + x2"), P("0.1*x1 - 2*x2 - x1^2 - 0.1*x1^3")]
VQ = P("x1^2 + x2^2")


@pytest.fixture(scope="module")
def certified():
    s1 = step1_max_sublevel(VQ, NONLIN, c_max=5.0)
    alt = alternate(VQ, NONLIN, Polynomial.constant(s1.c_star, 2) - VQ, max_rounds=3, c_contain=s1.c_star)
    return s1.c_star, alt.h


def test_validate_certified_barrier(certified):
    c_star, h = certified
    rep = validate_certificate(h, NONLIN, VQ, BOX, 100, c_star)
    assert rep.accepted and rep.violations == 0
    assert rep.inside > 0 and not rep.empty


def test_validate_trivial_barrier():
    rep = validate_certificate(P("-1"), NONLIN, VQ, BOX, 50)
    assert rep.violations == 0 and rep.empty and rep.area == 0.0


def test_validate_catches_corrupted_barrier(certified):
    c_star, h = certified
    top = h.degree
    coeffs = dict(h.coeffs)
    for m in coeffs:
        if sum(m) == top:
            coeffs[m] = -coeffs[m]
    bad = Polynomial(coeffs, 2)
    rep = validate_certificate(bad, NONLIN, VQ, BOX, 100, c_star)
    assert rep.violations > 0
    # the count agrees with a direct evaluation
    pts = grid_points(BOX, 100)
    inside = bad.eval(pts) >= 0
    hdot = sum(bad.diff(i).eval(pts) * NONLIN[i].eval(pts) for i in range(2))
    assert rep.barrier_violations == int(np.sum(inside & (hdot < -1e-6)))


ZERO_SYS = """states: x1 x2
domain: x1 in [-2, 2]; x2 in [-2, 2]
f: -x1 + x2 ; 0.1*x1 - 2*x2 - x1^2 - 0.1*x1^3
noise_sigma_n: 0.01
"""


@pytest.fixture(scope="module")
def zero_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("zero")
    (d / "z.sys").write_text(ZERO_SYS)
    s = load_system(d / "z.sys")
    cfg = RunConfig(system=str(d / "z.sys"), V="x1^2 + x2^2", c0=0.1, c_max=5.0, episodes=2,
                    max_rounds=4, horizon=4.0, initial_start=[-0.5, 0.5], candidates_per_axis=5)
    return run_algorithm1(s, cfg, str(d / "out")), d / "out"


def test_zero_residual_does_not_shrink(zero_run):
    rep, _ = zero_run
    assert len(rep.estimates) == 2, rep.stop_reason
    a1, a2 = (e.validation.area for e in rep.estimates)
    assert a2 >= 0.95 * a1
    assert rep.dataset_sizes[1] > rep.dataset_sizes[0]
    for e in rep.estimates:
        assert e.validation.accepted
        assert e.validation.area > rep.initial_area


def test_output_layout(zero_run):
    rep, out = zero_run
    for name in ("report.json", "timing.json", "contour_lcroa.csv"):
        assert (out / name).exists()
    for ep in (1, 2):
        d = out / f"episode_{ep:02d}"
        for name in ("estimate.json", "gp_model.json", "dataset.csv", "variance.csv", "contour_h.csv"):
            assert (d / name).exists(), name
    data = json.loads((out / "report.json").read_text())
    assert data["dataset_sizes"] == rep.dataset_sizes
    assert "output_dir" not in data["config"]
