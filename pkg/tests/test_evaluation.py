import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rlcp.core import RngStream
from rlcp.evaluation import (
    RegionSpec,
    TrialReport,
    accounting_identity_holds,
    chi2_median_radius,
    conditional_coverage,
    deviation_from_widths,
    local_coverage_curve,
    marginal_coverage,
    recombine,
    sliding_window_coverage,
    width_stats,
    window_bounds,
)
from rlcp.experiments import oracle_report, training_conditional_estimate, trial_data
from rlcp.simgen import SettingSpec


def synthetic_report(X, covered, trial=0, threshold=1.0):
    X = np.asarray(X, float).reshape(len(covered), -1)
    covered = np.asarray(covered, bool)
    n = covered.size
    thr = np.broadcast_to(np.asarray(threshold, float), (n,)).copy()
    score = np.where(covered, 0.0, np.where(np.isfinite(thr), thr + 1.0, 0.0))
    return TrialReport(trial, "synthetic", X, np.zeros(n), np.zeros(n), thr, np.ones(n, bool), score)


def test_marginal_all_and_none():
    X = np.zeros((10, 1))
    assert marginal_coverage(synthetic_report(X, [True] * 10)).coverage == 1.0
    assert marginal_coverage(synthetic_report(X, [False] * 10)).coverage == 0.0


def test_marginal_between_trial_se():
    reps = [synthetic_report(np.zeros((4, 1)), c, t) for t, c in enumerate([[1, 1, 1, 1], [1, 1, 0, 0]])]
    est = marginal_coverage(reps)
    assert est.coverage == 0.75
    assert est.se == pytest.approx(np.std([1.0, 0.5], ddof=1) / math.sqrt(2))


def test_tau_d():
    assert chi2_median_radius(1) == pytest.approx(0.6745, abs=1e-4)
    for d in (1, 5, 20, 50):
        assert stats.chi2.cdf(chi2_median_radius(d) ** 2, d) == pytest.approx(0.5, abs=1e-9)


def test_whole_region_is_marginal():
    rng = np.random.default_rng(0)
    rep = synthetic_report(rng.normal(size=(500, 3)), rng.random(500) < 0.8)
    row = conditional_coverage(rep, RegionSpec.whole())[0]
    assert row.coverage == marginal_coverage(rep).coverage


def test_empty_region_missing():
    rep = synthetic_report(np.full((100, 1), 0.1), [True] * 100)
    rows = {r.region: r for r in conditional_coverage(rep, RegionSpec.ball([5.0], 1.0))}
    assert rows["in"].n_points == 0 and math.isnan(rows["in"].coverage)


def test_axis_bins_partition():
    X = np.random.default_rng(1).uniform(-3, 3, size=(5000, 5))
    lab = RegionSpec.axis_bins().label(X)
    assert lab.min() >= 0 and lab.max() < 216
    assert RegionSpec.axis_bins().label(np.array([[3.0, -3.0, 0.0]]))[0] == 5 * 36 + 0 * 6 + 3


@given(st.integers(0, 2**31), st.sampled_from(["norm", "bins", "ball", "category"]))
@settings(max_examples=50, deadline=None)
def test_accounting_identity_property(seed, kind):
    rng = np.random.default_rng(seed)
    reps = []
    for t in range(int(rng.integers(1, 4))):
        n = int(rng.integers(1, 300))
        X = rng.normal(size=(n, 3))
        X[:, 2] = rng.integers(0, 3, n)
        reps.append(synthetic_report(X, rng.random(n) < rng.random(), t))
    region = {
        "norm": RegionSpec.norm_split(3),
        "bins": RegionSpec.axis_bins(),
        "ball": RegionSpec.ball([0, 0, 0], 1.0),
        "category": RegionSpec.category(2),
    }[kind]
    assert accounting_identity_holds(reps, region)


def test_local_curve_homogeneous():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20_000, 1))
    rep = synthetic_report(X, rng.random(20_000) < 0.9)
    curve = local_coverage_curve(rep)
    central = (np.abs(curve.x) <= 2) & ~curve.flagged
    band = 3 * np.sqrt(0.09 / curve.n_points[central])
    assert np.all(np.abs(curve.coverage[central] - 0.9) <= band)


def test_local_curve_missing_center():
    rep = synthetic_report(np.zeros((50, 1)), [True] * 50)
    curve = local_coverage_curve(rep, centers=[0.0, 2.0])
    assert curve.coverage[0] == 1.0 and math.isnan(curve.coverage[1])


def test_sliding_window_full_mass():
    rng = np.random.default_rng(3)
    rep = synthetic_report(rng.normal(size=(400, 1)), rng.random(400) < 0.7)
    curve = sliding_window_coverage(rep, 0, mass=1.0)
    assert np.all(curve.coverage == marginal_coverage(rep).coverage)


def test_sliding_window_uniform_bounds():
    v = np.random.default_rng(4).uniform(0, 1, 100_000)
    lo, hi = window_bounds(v, 0.5)
    assert lo == pytest.approx(0.475, abs=0.003) and hi == pytest.approx(0.525, abs=0.003)


def test_sliding_window_flags_edges():
    rng = np.random.default_rng(5)
    rep = synthetic_report(rng.normal(size=(1000, 1)), [True] * 1000)
    curve = sliding_window_coverage(rep, 0, points=[-10.0, 0.0, 10.0])
    assert curve.flagged.tolist() == [True, False, True]
    assert np.all(curve.coverage == 1.0) and np.all(curve.n_points == 50)


def test_width_stats():
    X = np.zeros((4, 1))
    ws = width_stats(synthetic_report(X, [True] * 4, threshold=1.5))
    assert ws.median == 3.0 and ws.fraction_infinite == 0.0
    ws = width_stats(synthetic_report(X, [True] * 4, threshold=[1.0, 1.0, np.inf, 1.0]))
    assert ws.fraction_infinite == 0.25 and ws.mean == np.inf and ws.mean_finite == 2.0


def test_infinite_counts_as_covered():
    rep = synthetic_report(np.zeros((2, 1)), [True, True], threshold=[np.inf, np.inf])
    rep.test_score[:] = 1e300
    assert rep.covered.all()


def test_deviation_constant_widths():
    assert deviation_from_widths(np.full((5, 40), 2.0)).D == 0.0


def test_deviation_excludes_degenerate():
    W = np.full((3, 40), 2.0)
    W[1] = np.inf
    W[2] = 0.0
    res = deviation_from_widths(W)
    assert res.excluded == 2 and res.n_points == 1


def test_oracle_training_conditional():
    spec = SettingSpec("setting1")
    tc = training_conditional_estimate(spec, "oracle", 200, 5, 4000, seed=1, n_pre=200)
    assert np.all(np.abs(tc.alpha_tr - 0.1) < 0.02)
    full = training_conditional_estimate(spec, "full", 200, 3, 1000, seed=1, n_pre=200)
    assert np.all(full.alpha_tr == 0.0)


def test_oracle_report_widths():
    spec = SettingSpec("setting1")
    data = trial_data(spec, RngStream(0), 0, 100, 100, 200)
    rep = oracle_report(spec, data, 0)
    assert np.allclose(rep.width, 2 * 1.6448536269514722 * np.abs(np.sin(rep.X[:, 0])))
