"""Effective sample size and dimension-adaptive bandwidth calibration.

``n_eff(h) = n * E[E[H(X, X') | X]^2] / E[H(X, X')^2]`` with ``X, X'`` drawn
from the pretraining features. The prototype variant replaces ``X'`` with
``X~' ~ H(X', .)``.

Expectations are plug-in averages over ordered pairs of distinct pretraining
points. The prototype offsets ``xi`` are drawn once and reused for every
bandwidth (``X~' = X' + h * xi``), so ``n_eff`` is a deterministic function of
``h`` during bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ContractViolation, as_generator, as_matrix
from .kernels import FlatKernel, Kernel, ProductBoxKernel, _sq_dists

VARIANTS = ("plain", "prototype")
# 2e6 ordered pairs
MAX_POINTS = 1415


class BandwidthDegenerate(ArithmeticError):
    """The effective sample size cannot be computed or the target cannot be reached."""


@dataclass(frozen=True)
class EffSampleEstimate:
    h: float
    n_eff: float
    variant: str
    mc_pairs: int


def neff_from_logs(L: np.ndarray, n: int) -> float:
    """``n * mean_a(mean_b H)^2 / mean_{a,b} H^2`` from ``L[r, a, b] = log H``.

    ``r`` indexes Monte Carlo repetitions; ``-inf`` entries (including the
    excluded diagonal) carry no mass but still count in the averages.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 2:
        L = L[None]
    top = L.max()
    if top == -np.inf or not np.isfinite(top):
        raise BandwidthDegenerate("kernel vanishes on every pretraining pair")
    E = np.exp(L - top)
    R, A, B = E.shape
    off = B - 1 if A == B else B
    inner = E.sum(axis=2) / off
    num = np.mean(inner**2)
    den2 = np.sum(E**2) / (R * A * off)
    if not den2 > 0:
        raise BandwidthDegenerate("kernel vanishes on every pretraining pair")
    return float(n * num / den2)


class NeffObjective:
    """``h -> n_eff(h)`` on a fixed Monte Carlo realization."""

    def __init__(self, pretrain, family: Kernel, variant: str = "plain", rng=None,
                 n: int | None = None, repetitions: int = 5, max_points: int = MAX_POINTS):
        if variant not in VARIANTS:
            raise ContractViolation(f"variant must be one of {VARIANTS}, got {variant!r}")
        X = as_matrix(pretrain, family.d)
        if X.shape[0] < 2:
            raise ContractViolation("need at least two pretraining points")
        gen = as_generator(0 if rng is None else rng)
        if X.shape[0] > max_points:
            X = X[np.sort(gen.choice(X.shape[0], max_points, replace=False))]
        self.X = X
        self.family = family
        self.variant = variant
        self.n = int(n) if n is not None else int(as_matrix(pretrain, family.d).shape[0])
        self.repetitions = int(repetitions)
        self.xi = None
        self.flat_draws = None
        if variant == "prototype":
            if isinstance(family, FlatKernel):
                self.flat_draws = [
                    np.stack([family.sample(x, gen) for x in X]) for _ in range(self.repetitions)
                ]
            else:
                self.xi = [family.unit_offsets(gen, X.shape[0]) for _ in range(self.repetitions)]

    @property
    def mc_pairs(self) -> int:
        m = self.X.shape[0]
        return m * (m - 1) * (self.repetitions if self.variant == "prototype" else 1)

    def kernel(self, h: float) -> Kernel:
        if isinstance(self.family, FlatKernel):
            return self.family
        return self.family.with_bandwidth(h)

    def logs(self, h: float) -> np.ndarray:
        k = self.kernel(h)
        X = self.X
        if self.variant == "plain":
            L = k.log_pairwise(X, X)
            np.fill_diagonal(L, -np.inf)
            return L[None]
        out = []
        for r in range(self.repetitions):
            if self.flat_draws is not None:
                Xt = self.flat_draws[r]
            elif isinstance(k, ProductBoxKernel):
                Xt = X + self.xi[r] * k.scaled_offsets
            else:
                Xt = X + k.h * self.xi[r]
            L = k.log_pairwise(X, Xt)
            np.fill_diagonal(L, -np.inf)
            out.append(L)
        return np.stack(out)

    def __call__(self, h: float) -> float:
        return neff_from_logs(self.logs(h), self.n)

    def estimate(self, h: float) -> EffSampleEstimate:
        return EffSampleEstimate(float(h), self(h), self.variant, self.mc_pairs)

    def diameter(self) -> float:
        X = self.X
        if isinstance(self.family, ProductBoxKernel):
            X = X[:, self.family._num]
        return float(math.sqrt(_sq_dists(X, X).max()))


def estimate_n_eff(pretrain, kernel: Kernel, variant: str = "plain", rng=None,
                   n: int | None = None, repetitions: int = 5) -> EffSampleEstimate:
    """Plug-in estimate of the effective sample size at ``kernel``'s bandwidth."""
    obj = NeffObjective(pretrain, kernel, variant, rng, n, repetitions)
    h = getattr(kernel, "h", None)
    if h is None and isinstance(kernel, ProductBoxKernel):
        h = float(np.max(kernel._h))
    return EffSampleEstimate(float(h) if h is not None else math.nan, obj(h or 1.0), variant, obj.mc_pairs)


@dataclass(frozen=True)
class BandwidthSolution:
    h: float
    n_eff: float
    target: float
    variant: str
    iterations: int
    h_lo: float
    h_hi: float
    saturated: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def solve_bandwidth(pretrain, family: Kernel, target: float = 50.0, variant: str = "plain", rng=None,
                    n: int | None = None, h_lo: float | None = None, h_hi: float | None = None,
                    repetitions: int = 5, tol: float = 1.0, max_iter: int = 200) -> BandwidthSolution:
    """Bisect on ``h`` (geometric midpoints) until ``|n_eff(h) - target| <= tol``.

    A target at or above ``n`` saturates to the top of the bracket.
    """
    obj = NeffObjective(pretrain, family, variant, rng, n, repetitions)
    if not target > 1:
        raise ContractViolation(f"target effective sample size must exceed 1, got {target}")
    diam = obj.diameter()
    if not diam > 0:
        raise BandwidthDegenerate("pretraining features are all identical")
    lo = float(h_lo) if h_lo is not None else 1e-3 * diam
    hi = float(h_hi) if h_hi is not None else diam
    if not 0 < lo < hi:
        raise ContractViolation(f"invalid bracket [{lo}, {hi}]")

    def f(h):
        try:
            return obj(h)
        except BandwidthDegenerate:
            return 0.0

    f_lo, f_hi = f(lo), f(hi)
    if f_lo > f_hi:
        raise BandwidthDegenerate(f"n_eff is not increasing over the bracket ({f_lo:.4g} > {f_hi:.4g})")
    if target >= obj.n:
        return BandwidthSolution(hi, f_hi, float(target), variant, 0, lo, hi, saturated=True)
    if target > f_hi + tol:
        raise BandwidthDegenerate(f"target {target} above n_eff(h_hi={hi:.4g}) = {f_hi:.4g}")
    if target < f_lo - tol:
        raise BandwidthDegenerate(f"target {target} below n_eff(h_lo={lo:.4g}) = {f_lo:.4g}")
    a, b = lo, hi
    h, val = (hi, f_hi) if abs(f_hi - target) <= abs(f_lo - target) else (lo, f_lo)
    it = 0
    while abs(val - target) > tol and b - a > 1e-4 * hi and it < max_iter:
        it += 1
        h = math.sqrt(a * b)
        val = f(h)
        if val < target:
            a = h
        else:
            b = h
    return BandwidthSolution(float(h), float(val), float(target), variant, it, lo, hi)
