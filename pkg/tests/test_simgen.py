import math

import numpy as np
import pytest
from scipy import stats

from rlcp.core import ContractViolation, Dataset, RngStream
from rlcp.simgen import (
    SettingSpec,
    TiltDegenerate,
    fit_knn,
    fit_linear,
    generate,
    oracle_interval,
    parse_setting,
    sample_tilted,
)


def test_setting1_moments():
    ds = generate(SettingSpec("setting1"), 100_000, RngStream(1))
    X = ds.features[:, 0]
    assert abs(X.mean()) < 0.02 and abs(X.var() - 1) < 0.03


def test_mvsin_degenerate_at_origin():
    for noise in ("std", "variance"):
        spec = SettingSpec("mvsin", 5, noise)
        assert spec.mean(np.zeros((1, 5)))[0] == 0.0
        assert spec.sigma(np.zeros((1, 5)))[0] == 0.0


def test_cube_support():
    X = generate(SettingSpec("cube", 3), 5000, 2).features
    assert X.min() >= -3 and X.max() <= 3


def test_generate_deterministic_and_prefix_stable():
    spec = parse_setting("mvsin:d=3")
    a = generate(spec, 5000, RngStream(9))
    b = generate(spec, 5000, RngStream(9))
    c = generate(spec, 9000, RngStream(9))
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(c.features[:5000], a.features)


def test_conventions_differ():
    x = np.array([[2.0]])
    s = SettingSpec("setting1").sigma(x)[0]
    v = SettingSpec("setting1", noise="variance").sigma(x)[0]
    assert s == pytest.approx(abs(math.sin(2.0)))
    assert v == pytest.approx(math.sqrt(abs(math.sin(2.0))))


def test_setting_validation():
    with pytest.raises(ContractViolation):
        SettingSpec("setting1", 2)
    with pytest.raises(ContractViolation):
        parse_setting("moons")
    assert parse_setting("cube:d=10") == SettingSpec("cube", 10)


def test_linear_interpolates():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    y = X @ [1.0, -2.0, 0.5] + 3.0
    sf = fit_linear(Dataset(X, y))
    assert np.max(sf.scores(X, y)) <= 1e-8


def test_linear_constant_response():
    X = np.random.default_rng(1).normal(size=(40, 2))
    sf = fit_linear(Dataset(X, np.full(40, 4.0)))
    coef = sf.predictor.coef
    assert coef[0] == pytest.approx(4.0, abs=1e-8) and np.allclose(coef[1:], 0, atol=1e-8)


def test_linear_slope_setting1():
    ds = generate(SettingSpec("setting1"), 2000, RngStream(3))
    assert fit_linear(ds).predictor.coef[1] == pytest.approx(0.5, abs=0.05)


def test_linear_categorical_dummies():
    rng = np.random.default_rng(4)
    sex = rng.integers(0, 3, 300).astype(float)
    x = rng.random(300)
    y = np.array([1.0, 5.0, -2.0])[sex.astype(int)] + 2 * x
    ds = Dataset(np.column_stack([sex, x]), y, categorical=(True, False))
    assert np.max(fit_linear(ds).scores(ds.features, y)) < 1e-7


def test_knn_full_k_is_mean():
    X = np.random.default_rng(5).normal(size=(30, 2))
    y = np.arange(30.0)
    sf = fit_knn(Dataset(X, y), 30)
    assert np.allclose(sf.predict(np.zeros((3, 2))), y.mean())


def test_knn_one_neighbor():
    X = np.random.default_rng(6).normal(size=(30, 2))
    y = np.arange(30.0)
    assert np.array_equal(fit_knn(Dataset(X, y), 1).predict(X), y)


def test_knn_tie_break_by_index():
    X = np.array([[-1.0], [1.0], [3.0]])
    sf = fit_knn(Dataset(X, [10.0, 20.0, 30.0]), 1)
    assert sf.predict(np.array([[0.0]]))[0] == 10.0


def test_knn_smooth_target():
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, size=(5000, 2))
    sf = fit_knn(Dataset(X, X.sum(1) / 2), 25)
    g = np.stack(np.meshgrid(np.linspace(-0.8, 0.8, 9), np.linspace(-0.8, 0.8, 9)), -1).reshape(-1, 2)
    assert np.max(np.abs(sf.predict(g) - g.sum(1) / 2)) <= 0.2


def test_knn_k_range():
    with pytest.raises(ContractViolation):
        fit_knn(Dataset(np.zeros((3, 1)), np.zeros(3)), 4)


def test_oracle_interval():
    spec = SettingSpec("setting1")
    o = oracle_interval(spec, [math.pi / 2])
    assert o.lower == pytest.approx(math.pi / 4 - 1.6449, abs=1e-4)
    assert o.upper == pytest.approx(math.pi / 4 + 1.6449, abs=1e-4)
    z = oracle_interval(spec, [0.0])
    assert z.lower == z.upper == 0.0
    o2 = oracle_interval(SettingSpec("setting2"), [0.7])
    assert (o2.lower + o2.upper) / 2 == pytest.approx(0.35)


def test_tilt_constant_is_untilted():
    spec = SettingSpec("setting1")
    a = sample_tilted(spec, lambda X: np.full(X.shape[0], 0.5), 1.0, 10_000, 1).features[:, 0]
    b = generate(spec, 10_000, 2).features[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_tilt_indicator_support():
    spec = SettingSpec("mvsin", 2)
    g = lambda X: (np.linalg.norm(X, axis=1) <= 0.5).astype(float)
    X = sample_tilted(spec, g, 1.0, 2000, 3).features
    assert np.all(np.linalg.norm(X, axis=1) <= 0.5)


def test_tilt_phi_mean():
    X = sample_tilted(SettingSpec("setting1"), lambda X: stats.norm.cdf(X[:, 0]), 1.0, 10_000, 4).features
    assert X.mean() >= 0.3


def test_tilt_degenerate():
    g = lambda X: (X[:, 0] > 8).astype(float)
    with pytest.raises(TiltDegenerate):
        sample_tilted(SettingSpec("setting1"), g, 1.0, 10, 5, max_proposals=100_000)
