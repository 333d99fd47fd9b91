"""Weighted score distributions, quantiles and conformal p-values.

Set inversion works on the ``2m + 1`` regions cut out by the ``m`` unique
calibration scores ``u_1 < ... < u_m``::

    region 0      : s < u_1
    region 2k - 1 : s == u_k
    region 2k     : u_k < s < u_{k+1}    (region 2m: s > u_m)

Every p-value used here is constant on each region and nonincreasing in
``s``, so ``{s : p(s) > alpha}`` is determined by the last region whose
p-value exceeds ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ContractViolation

SUM_TOL = 1e-12
# rounding slack when comparing accumulated weights against a level or alpha,
# so that e.g. nine weights of 0.1 still reach level 0.9
LEVEL_TOL = 1e-12


@dataclass(frozen=True)
class WeightedScoreDistribution:
    """``sum_i w_i delta_{s_i} + infinity_mass * delta_{+inf}``."""

    scores: np.ndarray
    weights: np.ndarray
    infinity_mass: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if s.shape != w.shape:
            raise ContractViolation("scores and weights must have equal length")
        if np.any(w < 0) or self.infinity_mass < 0:
            raise ContractViolation("weights must be nonnegative")
        total = w.sum() + self.infinity_mass
        if abs(total - 1.0) > SUM_TOL:
            raise ContractViolation(f"weights sum to {total!r}, not 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "infinity_mass", float(self.infinity_mass))

    @classmethod
    def from_unnormalized(cls, scores, weights, infinity_weight) -> "WeightedScoreDistribution":
        w = np.asarray(weights, dtype=float)
        z = w.sum() + infinity_weight
        if not z > 0:
            raise ContractViolation("total weight must be positive")
        w = w / z
        return cls(scores, w, max(0.0, 1.0 - w.sum()))

    def _merged(self):
        u, inv = np.unique(self.scores, return_inverse=True)
        return u, np.bincount(inv, weights=self.weights, minlength=u.size)

    def cdf(self, v: float) -> float:
        return float(self.weights[self.scores <= v].sum()) + (self.infinity_mass if v == np.inf else 0.0)


def quantile(wd: WeightedScoreDistribution, level: float) -> float:
    """Smallest ``v`` with ``CDF(v) >= level``, scanning unique scores then ``+inf``."""
    if not 0.0 < level < 1.0:
        raise ContractViolation(f"level must lie in (0, 1), got {level}")
    u, w = wd._merged()
    cum = np.cumsum(w)
    hit = np.flatnonzero(cum >= level - LEVEL_TOL)
    return float(u[hit[0]]) if hit.size else np.inf


def pvalue_deterministic(weights, test_weight, scores, s_test) -> float:
    """``sum_i w_i 1{s_i >= s_test} + w_test``."""
    weights = np.asarray(weights, dtype=float)
    scores = np.asarray(scores, dtype=float)
    return float(weights[scores >= s_test].sum() + test_weight)


def pvalue_smoothed(weights, test_weight, scores, s_test, u) -> float:
    """``sum_i w_i 1{s_i > s} + u * (sum_i w_i 1{s_i == s} + w_test)``."""
    weights = np.asarray(weights, dtype=float)
    scores = np.asarray(scores, dtype=float)
    strict = weights[scores > s_test].sum()
    tied = weights[scores == s_test].sum()
    return float(strict + u * (tied + test_weight))


def region_representatives(unique_scores) -> np.ndarray:
    """One score inside each of the ``2m + 1`` regions."""
    u = np.asarray(unique_scores, dtype=float)
    if u.size == 0:
        return np.array([0.0])
    gaps = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    reps = np.empty(2 * u.size + 1)
    reps[0::2] = gaps
    reps[1::2] = u
    return reps


def region_index(unique_scores, s) -> np.ndarray:
    """Region containing each score in ``s``."""
    u = np.asarray(unique_scores, dtype=float)
    s = np.asarray(s, dtype=float)
    left = np.searchsorted(u, s, side="left")
    right = np.searchsorted(u, s, side="right")
    return np.where(right > left, 2 * left + 1, 2 * left)


def invert_regions(region_p, unique_scores, alpha):
    """Threshold ``(value, closed)`` realizing ``{s : p(s) > alpha}``.

    ``region_p`` has shape ``(..., 2m + 1)``. Returns arrays broadcast over
    the leading axes; an empty set is ``-inf``. A p-value within
    ``LEVEL_TOL`` of ``alpha`` counts as equal to it.
    """
    P = np.asarray(region_p, dtype=float)
    u = np.asarray(unique_scores, dtype=float)
    above = P > alpha + LEVEL_TOL
    n_regions = P.shape[-1]
    last = n_regions - 1 - np.argmax(above[..., ::-1], axis=-1)
    any_above = above.any(axis=-1)
    values = np.concatenate([u, [np.inf]])
    # odd region 2k-1 -> closed at u_k; even region 2k -> open at u_{k+1}
    is_odd = last % 2 == 1
    k_closed = (last - 1) // 2
    k_open = last // 2
    thr = np.where(is_odd, values[np.clip(k_closed, 0, None)], values[k_open])
    closed = is_odd | (last == n_regions - 1)
    thr = np.where(any_above, thr, -np.inf)
    closed = np.where(any_above, closed, False)
    return thr, closed


def threshold_from_pvalue_sweep(scores, pvalue_fn: Callable[[float], float], alpha: float):
    """Invert a nonincreasing p-value function over the calibration scores.

    ``pvalue_fn`` is evaluated once per region; returns ``(threshold, closed)``.
    """
    u = np.unique(np.asarray(scores, dtype=float))
    reps = region_representatives(u)
    P = np.array([pvalue_fn(float(s)) for s in reps])
    thr, closed = invert_regions(P, u, alpha)
    return float(thr), bool(closed)


class ScoreGrid:
    """Calibration scores sorted and grouped by unique value."""

    def __init__(self, scores):
        s = np.asarray(scores, dtype=float).ravel()
        self.scores = s
        self.order = np.argsort(s, kind="stable")
        self.sorted = s[self.order]
        self.unique, self.starts = np.unique(self.sorted, return_index=True)
        self.group = np.searchsorted(self.unique, s)

    @property
    def m(self) -> int:
        return self.unique.size

    def merge(self, w: np.ndarray) -> np.ndarray:
        """Sum weights (last axis indexed like ``scores``) per unique score."""
        w = np.asarray(w, dtype=float)
        return np.add.reduceat(w[..., self.order], self.starts, axis=-1)

    def weighted_region_pvalues(self, merged, test_weight, u):
        """Region p-values ``sum w 1{s_i > s} + u (sum w 1{s_i = s} + w_test)``.

        ``merged`` is ``(B, m)``; ``test_weight`` and ``u`` are ``(B,)``.
        """
        merged = np.atleast_2d(merged)
        test_weight = np.asarray(test_weight, dtype=float).reshape(-1, 1)
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        # tail[:, k] = mass strictly above u_k (k = 0 means everything)
        rev = np.cumsum(merged[:, ::-1], axis=1)[:, ::-1]
        tail = np.concatenate([rev, np.zeros((merged.shape[0], 1))], axis=1)
        P = np.empty((merged.shape[0], 2 * self.m + 1))
        P[:, 0::2] = tail + u * test_weight
        P[:, 1::2] = tail[:, 1:] + u * (merged + test_weight)
        return P

    def region_of(self, s) -> np.ndarray:
        return region_index(self.unique, s)

    def invert(self, P, alpha):
        return invert_regions(P, self.unique, alpha)
