"""Trial pipelines: generate, pretrain, calibrate, predict, report.

Stream layout for a run seeded with ``seed``::

    (trial, "pretrain") / (trial, "calibration") / (trial, "test")   data draws
    (trial, "method", label)                                          method draws
    (trial, "redraw")                                                 deviation redraws

so any trial, or any method within a trial, can be rerun alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import AbsoluteResidualScore, Dataset, RngStream, widths
from .evaluation import TrialReport, deviation_from_widths, marginal_coverage
from .kernels import Kernel
from .methods import Conformalizer, MethodConfig
from .simgen import SettingSpec, fit_predictor, generate, oracle_bounds, sample_tilted


@dataclass(frozen=True)
class TrialData:
    pretrain: Dataset
    calibration: Dataset
    test: Dataset
    score: AbsoluteResidualScore


def trial_data(spec: SettingSpec, base: RngStream, trial: int, n_pre: int, n_cal: int, n_test: int,
               predictor: str = "linear", test_sampler: Callable | None = None, k: int = 25) -> TrialData:
    t = base.child(trial)
    pre = generate(spec, n_pre, t.child("pretrain"))
    cal = generate(spec, n_cal, t.child("calibration"))
    if test_sampler is None:
        test = generate(spec, n_test, t.child("test"))
    else:
        test = test_sampler(n_test, t.child("test").generator())
    return TrialData(pre, cal, test, fit_predictor(predictor, pre, k))


def run_method(config: MethodConfig, data: TrialData, base: RngStream, trial: int,
               labels=None) -> TrialReport:
    conf = Conformalizer(config, data.calibration, data.score)
    stream = base.child(trial, "method", config.label)
    X, y = data.test.features, data.test.response
    batch = conf.predict(X, stream, y)
    return TrialReport.from_batch(trial, config.label, X, y, batch, labels)


def run_trials(spec: SettingSpec, configs: Sequence[MethodConfig], trials: int, seed: int,
               n_pre: int = 2000, n_cal: int = 2000, n_test: int = 2000, predictor: str = "linear",
               test_sampler: Callable | None = None, trial_offset: int = 0,
               k: int = 25) -> dict[str, list[TrialReport]]:
    base = RngStream(seed)
    out: dict[str, list[TrialReport]] = {c.label: [] for c in configs}
    for t in range(trial_offset, trial_offset + trials):
        data = trial_data(spec, base, t, n_pre, n_cal, n_test, predictor, test_sampler, k)
        for cfg in configs:
            out[cfg.label].append(run_method(cfg, data, base, t))
    return out


def oracle_report(spec: SettingSpec, data: TrialData, trial: int) -> TrialReport:
    """The 5%-95% conditional interval, expressed as a report."""
    X, y = data.test.features, data.test.response
    lo, hi = oracle_bounds(spec, X)
    center = (lo + hi) / 2
    half = (hi - lo) / 2
    return TrialReport(trial, "oracle", X, y, center, half, np.ones(len(y), bool), np.abs(y - center))


# -- training-conditional miscoverage ---------------------------------------------------

@dataclass(frozen=True)
class TrainingConditional:
    alpha_tr: np.ndarray
    quantiles: dict


def training_conditional_estimate(spec: SettingSpec, config: MethodConfig | str, n: int, trials: int,
                                  test_per_trial: int, seed: int, n_pre: int = 2000,
                                  probs=(0.1, 0.5, 0.9)) -> TrainingConditional:
    """Miscoverage on fresh test points, one value per (pretraining, calibration) draw.

    ``config`` may also be ``"oracle"`` or ``"full"`` (the whole real line).
    """
    base = RngStream(seed)
    vals = []
    for t in range(trials):
        data = trial_data(spec, base, t, n_pre, n, test_per_trial)
        if config == "oracle":
            rep = oracle_report(spec, data, t)
        elif config == "full":
            vals.append(0.0)
            continue
        else:
            rep = run_method(config, data, base, t)
        vals.append(1.0 - rep.covered.mean())
    a = np.array(vals)
    return TrainingConditional(a, {p: float(np.quantile(a, p)) for p in probs})


# -- covariate shift ------------------------------------------------------------------------

def covariate_shift_coverage(spec: SettingSpec, g: Callable, bound: float, config: MethodConfig,
                             trials: int, seed: int, n_pre: int = 2000, n_cal: int = 2000,
                             n_test: int = 2000):
    """Train on ``P``, test on ``(P_X o g) x P_{Y|X}``; returns reports and coverage."""
    sampler = lambda n, gen: sample_tilted(spec, g, bound, n, gen)
    reps = run_trials(spec, [config], trials, seed, n_pre, n_cal, n_test, test_sampler=sampler)[config.label]
    return reps, marginal_coverage(reps)


# -- randomization variability ---------------------------------------------------------------

def deviation_D(data: TrialData, kernel: Kernel, X_points: np.ndarray, n_redraws: int, rng: RngStream,
                alpha: float = 0.1, smoothed: bool = False):
    """``MAD / median`` of RLCP widths over prototype redraws with the data held fixed."""
    cfg = MethodConfig("rlcp", alpha, kernel=kernel, smoothed=smoothed)
    conf = Conformalizer(cfg, data.calibration, data.score)
    X = np.asarray(X_points, dtype=float).reshape(-1, data.calibration.d)
    B = X.shape[0]
    rep = np.repeat(X, n_redraws, axis=0)
    streams = [rng.child(i, r) for i in range(B) for r in range(n_redraws)]
    batch = conf.predict(rep, point_rngs=streams)
    W = widths(batch.threshold, batch.closed).reshape(B, n_redraws)
    return deviation_from_widths(W)


def deviation_experiment(spec: SettingSpec, kernel: Kernel, data_draws: int, points: int, n_redraws: int,
                         seed: int, n_pre: int = 2000, n_cal: int = 2000, alpha: float = 0.1,
                         smoothed: bool = False):
    """Average ``D`` over independent data draws; returns ``(D, excluded, per_draw)``."""
    base = RngStream(seed)
    per, excluded, total = [], 0, 0
    for t in range(data_draws):
        data = trial_data(spec, base, t, n_pre, n_cal, points)
        res = deviation_D(data, kernel, data.test.features, n_redraws, base.child(t, "redraw"), alpha, smoothed)
        per.append(res.D)
        excluded += res.excluded
        total += res.n_points
    return float(np.nanmean(per)), excluded, per
