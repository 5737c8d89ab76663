import math

import numpy as np
import pytest

from bcroa.errors import BcroaError, GpFitError
from bcroa.gp import (ConfidenceLedger, Dataset, GpConfig, confidence, delta_for_beta, fit,
                      info_gain, load_dataset_csv, save_dataset_csv)

from gp_oracles import info_gain_eig, posterior_variance, ridge_mean


def random_dataset(rng, k=None, n=None, p=2):
    n = n or int(rng.integers(1, 4))
    k = k or int(rng.integers(1, 31))
    X = rng.uniform(-1.5, 1.5, size=(k, n))
    return Dataset(X, rng.normal(size=(k, p)))


def test_fit_matches_ridge_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        data = random_dataset(rng)
        n = data.state_dim
        cfg = GpConfig(signal_variance=1.3, length_scale=0.8, noise_sigma_n=0.1,
                       prior_weight_variance=2.0, mean_degree=int(rng.integers(1, 3)))
        box = [(-2.0, 2.0)] * n
        model = fit(data, cfg, box=box)
        Xq = rng.uniform(-2, 2, size=(20, n))
        mean, _ = model.predict(Xq)
        ref = ridge_mean(data.inputs, data.targets, Xq, cfg.mean_degree, 0.1, 2.0)
        assert np.max(np.abs(mean - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))
        # the exported polynomial is the same function
        polys = model.mean_polynomial()
        vals = np.stack([q.eval(Xq) for q in polys], axis=1)
        assert np.max(np.abs(vals - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def test_scaling_does_not_change_the_mean():
    rng = np.random.default_rng(2)
    data = random_dataset(rng, 12, 2)
    cfg = GpConfig(noise_sigma_n=0.05)
    a = fit(data, cfg)
    b = fit(data, cfg, box=[(-3.0, 3.0), (-2.0, 2.0)])
    Xq = rng.uniform(-1, 1, size=(30, 2))
    assert np.max(np.abs(a.predict(Xq)[0] - b.predict(Xq)[0])) <= 1e-8


def test_variance_matches_oracle_and_is_bounded():
    rng = np.random.default_rng(3)
    for _ in range(20):
        data = random_dataset(rng)
        cfg = GpConfig(signal_variance=1.1, length_scale=0.6, noise_sigma_n=0.05)
        model = fit(data, cfg)
        Xq = rng.uniform(-2, 2, size=(50, data.state_dim))
        var = model.variance(Xq)
        ref = posterior_variance(data.inputs, Xq, 1.1, 0.6, 0.05)
        assert np.max(np.abs(var - np.clip(ref, 0, 1.1))) <= 1e-8
        assert np.all(var >= 0) and np.all(var <= 1.1)


def test_variance_non_increasing_under_data_addition():
    rng = np.random.default_rng(4)
    cfg = GpConfig(signal_variance=math.exp(0.1), length_scale=math.exp(0.2), noise_sigma_n=0.01)
    data = random_dataset(rng, 10, 2)
    Xq = rng.uniform(-2, 2, size=(1000, 2))
    prev = fit(data, cfg).variance(Xq)
    for _ in range(5):
        data = data.union(random_dataset(rng, 4, 2))
        cur = fit(data, cfg).variance(Xq)
        assert np.all(cur >= 0)
        assert np.all(cur <= prev + 1e-10)
        prev = cur


def test_info_gain_matches_eigen_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        data = random_dataset(rng)
        cfg = GpConfig(signal_variance=0.9, length_scale=0.7, noise_sigma_n=0.2)
        g = info_gain(fit(data, cfg))
        assert g == pytest.approx(info_gain_eig(data.inputs, 0.9, 0.7, 0.2), rel=1e-8, abs=1e-10)


def test_worked_example():
    data = Dataset(np.array([[0.0], [1.0], [-1.0]]), np.array([[0.0], [1.0], [-1.0]]))
    cfg = GpConfig(signal_variance=1.0, length_scale=1.0, noise_sigma_n=1e-6,
                   prior_weight_variance=1e6, mean_degree=1)
    model = fit(data, cfg)
    m = model.mean_polynomial()[0]
    assert m.coeff((1,)) == pytest.approx(1.0, abs=1e-3)
    assert m.coeff((0,)) == pytest.approx(0.0, abs=1e-3)


def test_far_query_recovers_prior_variance():
    data = Dataset(np.array([[0.0, 0.0]]), np.array([[1.0]]))
    model = fit(data, GpConfig(length_scale=0.1, signal_variance=2.0))
    assert model.variance(np.array([[5.0, 5.0]]))[0] == pytest.approx(2.0, abs=1e-12)


def test_delta_inverts_beta_relation():
    delta = delta_for_beta(beta=60.0, k=3, gamma=0.5, B=1.0)
    assert delta is not None and 0 < delta < 1
    assert 2 * 1.0 + 300 * 0.5 * math.log(3 / delta) ** 3 == pytest.approx(3600.0, rel=1e-10)


def test_delta_reference_value():
    assert delta_for_beta(2.0, 1, 0.001, 0.0) == pytest.approx(math.exp(-(4 / 0.3) ** (1 / 3)), rel=1e-12)
    assert delta_for_beta(2.0, 1, 0.001, 0.0) == pytest.approx(0.0934, abs=1e-4)


def test_delta_edge_cases():
    assert delta_for_beta(4.0, 10, 0.0, 1.0) == 0.0
    assert delta_for_beta(1.0, 10, 1.0, 1.0) is None
    assert delta_for_beta(4.0, 1000, 50.0, 1.0) is None
    with pytest.raises(BcroaError):
        delta_for_beta(-1.0, 1, 1.0, 1.0)


def test_confidence():
    assert confidence(0.05, 1) == pytest.approx(0.95)
    assert confidence(0.1, 3) == pytest.approx(0.729)
    assert confidence(0.0, 5) == 1.0
    with pytest.raises(BcroaError):
        confidence(1.0, 1)


def test_ledger_records_entries():
    led = ConfidenceLedger()
    e = led.record(1, 2, 60.0, 0.5, 1.0)
    assert e.delta == delta_for_beta(60.0, 2, 0.5, 1.0)
    assert led.to_json()[0]["confidence"] == pytest.approx((1 - e.delta) ** 2)
    assert led.record(2, 2, 4.0, 50.0, 1.0).confidence is None


def test_fit_rejects_bad_inputs():
    with pytest.raises(GpFitError):
        fit(Dataset.empty(2, 1), GpConfig())
    data = Dataset(np.array([[3.0, 0.0]]), np.array([[1.0]]))
    with pytest.raises(GpFitError):
        fit(data, GpConfig(), box=[(-2.0, 2.0), (-2.0, 2.0)])


def test_duplicate_inputs_are_fine_with_noise():
    X = np.zeros((5, 2))
    model = fit(Dataset(X, np.ones((5, 1))), GpConfig(noise_sigma_n=0.01))
    assert model.variance(np.zeros((1, 2)))[0] >= 0


def test_dataset_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    data = random_dataset(rng, 7, 2, 3)
    path = tmp_path / "d.csv"
    save_dataset_csv(data, path)
    back = load_dataset_csv(path, 2)
    assert np.array_equal(back.inputs, data.inputs) and np.array_equal(back.targets, data.targets)
    assert back.checksum() == data.checksum()
