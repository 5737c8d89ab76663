import math
import warnings

import numpy as np
import pytest

from bcroa.cheb import approximate_system
from bcroa.errors import BcroaError, EmptySafeSetError
from bcroa.exprlang import load_system, parse_system
from bcroa.gp import Dataset, GpConfig, fit
from bcroa.roa import assemble_learned_system
from bcroa.sim import (candidate_grid, integrate, integrate_batch, measure, polynomial_field,
                       residual, select_sample, trajectory_scores)

from conftest import fixture_path


def decay(X):
    return -X


def test_rk4_exponential_decay():
    tr = integrate(decay, [1.0], T=1.0, dt=1e-3, r_conv=1.0)
    assert abs(tr.states[-1, 0] - math.exp(-1.0)) <= 1e-6
    assert np.all(np.diff(tr.times) > 0)
    assert len(tr.times) == len(tr.states)


def test_rk4_is_fourth_order():
    e1 = abs(integrate(decay, [1.0], 1.0, 0.1).states[-1, 0] - math.exp(-1))
    e2 = abs(integrate(decay, [1.0], 1.0, 0.05).states[-1, 0] - math.exp(-1))
    assert 8 <= e1 / e2 <= 32


def test_equilibrium_stays_put():
    tr = integrate(decay, [0.0, 0.0], T=0.5)
    assert np.all(tr.states == 0.0)
    assert tr.converged


def test_escape_returns_partial_trajectory():
    tr = integrate(lambda X: X, [1.0], T=5.0, dt=1e-2, box=[(-2.0, 2.0)])
    assert tr.escaped and not tr.converged
    assert np.all(np.abs(tr.states) <= 4.0)
    assert tr.times[-1] < 5.0


def test_invalid_step_rejected():
    with pytest.raises(BcroaError):
        integrate(decay, [1.0], T=1.0, dt=0.0)
    with pytest.raises(BcroaError):
        integrate(decay, [1.0], T=1e-4, dt=1e-3)


def test_batch_matches_single():
    X0 = np.array([[0.5, -0.2], [1.0, 1.0]])
    times, states, alive = integrate_batch(decay, X0, T=0.5, dt=1e-3, record_stride=10)
    for i in range(2):
        single = integrate(decay, X0[i], T=0.5, dt=1e-3)
        assert np.array_equal(states[-1, i], single.states[-1])
    assert alive.all()


def _zero_residual_system(sigma="0"):
    return parse_system(f"""states: x1 x2
domain: x1 in [-2, 2]; x2 in [-2, 2]
f: -x1 + x2 ; -x2 - x1^3
noise_sigma_n: {sigma}
""")


def test_measure_zero_residual_and_no_noise():
    s = _zero_residual_system()
    a = approximate_system(s, 4)
    tr = integrate(a.eval, [1.0, -1.0], T=1.0)
    batch = measure(s, a, tr, stride=10, seed=0, sigma_n=0.0)
    assert batch.inputs.shape[0] == len(tr.states[::10])
    assert np.all(batch.targets == 0.0)


def test_measure_matches_residual_oracle():
    s = load_system(fixture_path("ex3.sys"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = approximate_system(s, 4)
    tr = integrate(a.eval, [-0.5, 0.5], T=1.0)
    batch = measure(s, a, tr, stride=5, sigma_n=0.0)
    X = batch.inputs
    # independent evaluation: true field minus the polynomial model, pointwise
    truth = np.stack([-X[:, 0] + X[:, 1],
                      X[:, 0] ** 2 * X[:, 1] + 1 - np.sqrt(np.abs(np.exp(X[:, 0]) * np.cos(X[:, 0])))
                      - 0.1 * np.sin(X[:, 1])], axis=1)
    model = np.stack([p.eval(X) for p in a.polynomial_field()], axis=1)
    assert np.max(np.abs(batch.targets - (truth - model))) <= 1e-12
    assert np.array_equal(residual(s, a, X), batch.targets)


def test_measure_determinism_and_noise_level():
    s = _zero_residual_system("0.05")
    a = approximate_system(s, 4)
    tr = integrate(a.eval, [1.0, -1.0], T=10.0)
    b1 = measure(s, a, tr, stride=1, seed=42)
    b2 = measure(s, a, tr, stride=1, seed=42)
    assert np.array_equal(b1.targets, b2.targets)
    assert b1.targets.size >= 10_000
    assert abs(float(np.std(b1.targets)) - 0.05) <= 0.005
    with pytest.raises(BcroaError):
        measure(s, a, tr, stride=0)


def test_learned_example3_converges():
    s = load_system(fixture_path("ex3.sys"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = approximate_system(s, 4)
    tr = integrate(s.true_rhs, [-0.05, -0.05], T=10.0, box=s.domain)
    batch = measure(s, a, tr, seed=1)
    cfg = GpConfig(signal_variance=math.exp(0.1), length_scale=math.exp(0.2),
                   noise_sigma_n=0.01, include_constant=False)
    model = fit(Dataset(batch.inputs, batch.targets), cfg, box=s.domain)
    learned = assemble_learned_system(a, model)
    tr2 = integrate(polynomial_field(learned), [-0.05, -0.05], T=10.0, box=s.domain)
    assert tr2.converged


def _model_at(points):
    X = np.asarray(points, dtype=float)
    return fit(Dataset(X, np.zeros((len(X), 1))), GpConfig(length_scale=0.3, noise_sigma_n=0.01))


def test_uniform_variance_ties_go_to_first_index():
    X = np.array([[100.0, 100.0]])
    model = _model_at(X)
    grid = candidate_grid([-1, -1], [1, 1], 3)
    x, score, idx = select_sample(model, lambda P: np.ones(len(P)), grid, T=0.5, dt=1e-2,
                                  dynamics=decay, score_stride=10)
    assert idx == 0 and np.array_equal(x, grid[0])


def test_high_variance_candidate_is_selected():
    rng = np.random.default_rng(0)
    # dense data around (-1, 0), nothing near (1, 0)
    model = _model_at(rng.normal([-1.0, 0.0], 0.05, size=(50, 2)))
    grid = np.array([[-1.0, 0.0], [1.0, 0.0], [-1.05, 0.02]])
    region = lambda P: 4.0 - np.sum(P ** 2, axis=1)
    x, score, idx = select_sample(model, region, grid, T=1.0, dt=1e-2, dynamics=lambda X: np.zeros_like(X),
                                  score_stride=10)
    assert idx == 1


def test_score_matches_predict_loop():
    rng = np.random.default_rng(1)
    model = _model_at(rng.uniform(-1, 1, size=(20, 2)))
    region = lambda P: 1.5 - np.sum(P ** 2, axis=1)
    grid = candidate_grid([-1, -1], [1, 1], 4)
    dyn = lambda X: np.stack([X[:, 1], -X[:, 0] - 0.5 * X[:, 1]], axis=1)
    x, score, idx = select_sample(model, region, grid, T=2.0, dt=1e-2, dynamics=dyn, score_stride=5)
    # independent loop: integrate the chosen start and sum predict() variances inside the region
    tr = integrate(dyn, x, T=2.0, dt=1e-2)
    total = 0.0
    for k in range(0, len(tr.states), 5):
        pt = tr.states[k]
        if region(pt[None, :])[0] >= 0:
            _, v = model.predict(pt)
            total += v * model.w_hat.shape[1]
    assert abs(total - score) <= 1e-10
    assert region(x[None, :])[0] >= 0


def test_empty_safe_set():
    model = _model_at([[0.0, 0.0]])
    with pytest.raises(EmptySafeSetError):
        select_sample(model, lambda P: -np.ones(len(P)), candidate_grid([-1, -1], [1, 1], 3),
                      T=0.1, dt=1e-2, dynamics=decay)
