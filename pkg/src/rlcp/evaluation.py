"""Coverage and width metrics over per-test-point trial reports.

Every metric is a deterministic function of the reports. Infinite-width sets
contain every response, so they count as covered; the fraction of them is
reported separately by :func:`width_stats`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from .core import ContractViolation, contains_scores, widths


@dataclass
class TrialReport:
    """Per-test-point outcome of one method on one trial."""

    trial: int
    method: str
    X: np.ndarray
    y: np.ndarray
    center: np.ndarray
    threshold: np.ndarray
    closed: np.ndarray
    test_score: np.ndarray
    pvalue: np.ndarray | None = None
    prototypes: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    @classmethod
    def from_batch(cls, trial, method, X, y, batch, labels=None) -> "TrialReport":
        return cls(
            trial=int(trial),
            method=str(method),
            X=np.asarray(X, dtype=float).reshape(len(batch), -1),
            y=np.asarray(y, dtype=float),
            center=batch.center,
            threshold=batch.threshold,
            closed=batch.closed,
            test_score=batch.test_score,
            pvalue=batch.pvalue,
            prototypes=batch.prototypes,
            labels=dict(labels or {}),
        )

    def __len__(self):
        return self.threshold.shape[0]

    @property
    def covered(self) -> np.ndarray:
        return contains_scores(self.threshold, self.closed, self.test_score)

    @property
    def width(self) -> np.ndarray:
        return widths(self.threshold, self.closed)


@dataclass(frozen=True)
class CoverageEstimate:
    coverage: float
    se: float
    n_trials: int
    n_points: int
    n_covered: int


def _as_list(reports):
    if isinstance(reports, TrialReport):
        return [reports]
    reports = list(reports)
    if not reports:
        raise ContractViolation("need at least one report")
    return reports


def _between_trial_se(per_trial: np.ndarray, pooled: float, n_points: int) -> float:
    if per_trial.size > 1:
        return float(per_trial.std(ddof=1) / math.sqrt(per_trial.size))
    return float(math.sqrt(max(pooled * (1 - pooled), 0.0) / max(n_points, 1)))


def marginal_coverage(reports, mask=None) -> CoverageEstimate:
    """Pooled coverage fraction with a between-trial standard error.

    ``mask`` (one boolean array per report) restricts to a subset of points.
    """
    reports = _as_list(reports)
    hits, counts, per = 0, 0, []
    for i, r in enumerate(reports):
        cov = r.covered
        if mask is not None:
            cov = cov[np.asarray(mask[i], dtype=bool)]
        hits += int(cov.sum())
        counts += cov.size
        if cov.size:
            per.append(cov.mean())
    pooled = hits / counts if counts else math.nan
    return CoverageEstimate(pooled, _between_trial_se(np.array(per), pooled, counts), len(reports), counts, hits)


# -- regions ---------------------------------------------------------------------

def chi2_median_radius(d: int, tol: float = 1e-10) -> float:
    """``tau_d`` with ``tau_d^2`` the median of the chi-square law with ``d`` degrees."""
    if d < 1:
        raise ContractViolation("dimension must be positive")
    lo, hi = 0.0, float(d) + 10.0 * math.sqrt(d) + 10.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gammainc(0.5 * d, 0.5 * mid) < 0.5:
            lo = mid
        else:
            hi = mid
    return math.sqrt(0.5 * (lo + hi))


@dataclass(frozen=True)
class RegionSpec:
    """A labelling of feature vectors into named regions.

    kinds: ``whole``, ``ball`` (center, radius), ``norm-split`` (tau),
    ``axis-bins`` (edges on the leading coordinates), ``category`` (column).
    """

    kind: str
    params: tuple = ()

    @classmethod
    def whole(cls):
        return cls("whole")

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", (tuple(np.atleast_1d(np.asarray(center, float)).tolist()), float(radius)))

    @classmethod
    def norm_split(cls, d: int):
        return cls("norm-split", (chi2_median_radius(d),))

    @classmethod
    def axis_bins(cls, coords=(0, 1, 2), edges=(-3, -2, -1, 0, 1, 2, 3)):
        return cls("axis-bins", (tuple(coords), tuple(float(e) for e in edges)))

    @classmethod
    def category(cls, column: int, names=None):
        return cls("category", (int(column), tuple(names) if names else None))

    def names(self, X=None) -> list[str]:
        if self.kind == "whole":
            return ["all"]
        if self.kind == "ball":
            return ["in", "out"]
        if self.kind == "norm-split":
            return ["B_in", "B_out"]
        if self.kind == "axis-bins":
            coords, edges = self.params
            nb = len(edges) - 1
            return ["bin" + "".join(f"_{i}" for i in idx) for idx in np.ndindex(*(nb,) * len(coords))]
        if self.kind == "category":
            col, names = self.params
            if names:
                return list(names)
            return [str(int(c)) for c in np.unique(X[:, col])]
        raise ContractViolation(f"unknown region kind {self.kind!r}")

    def label(self, X) -> np.ndarray:
        """Region index for every row of ``X``."""
        X = np.asarray(X, dtype=float)
        if self.kind == "whole":
            return np.zeros(X.shape[0], dtype=np.int64)
        if self.kind == "ball":
            center, r = self.params
            return (np.linalg.norm(X - np.array(center), axis=1) > r).astype(np.int64)
        if self.kind == "norm-split":
            return (np.linalg.norm(X, axis=1) > self.params[0]).astype(np.int64)
        if self.kind == "axis-bins":
            coords, edges = self.params
            e = np.array(edges)
            nb = e.size - 1
            if X.shape[1] < len(coords):
                raise ContractViolation("not enough coordinates for the axis bins")
            # the closed right edge joins the last bin
            idx = np.clip(np.searchsorted(e, X[:, list(coords)], side="right") - 1, 0, nb - 1)
            return np.ravel_multi_index(tuple(idx.T), (nb,) * len(coords)).astype(np.int64)
        if self.kind == "category":
            col, names = self.params
            if names:
                return X[:, col].astype(np.int64)
            return np.searchsorted(np.unique(X[:, col]), X[:, col]).astype(np.int64)
        raise ContractViolation(f"unknown region kind {self.kind!r}")


@dataclass(frozen=True)
class RegionCoverage:
    region: str
    n_points: int
    n_covered: int
    coverage: float
    se: float
    mass: float
    sparse: bool


def conditional_coverage(reports, region: RegionSpec, min_points: int = 50) -> list[RegionCoverage]:
    """Coverage among test points falling in each region, pooled over trials.

    Empty regions are reported with ``coverage = nan``; regions below
    ``min_points`` are flagged ``sparse``.
    """
    reports = _as_list(reports)
    X_all = np.concatenate([r.X for r in reports])
    names = region.names(X_all)
    R = len(names)
    hits = np.zeros(R, dtype=np.int64)
    counts = np.zeros(R, dtype=np.int64)
    per_trial = [[] for _ in range(R)]
    for r in reports:
        lab = region.label(r.X)
        cov = r.covered
        h = np.bincount(lab, weights=cov, minlength=R).astype(np.int64)
        c = np.bincount(lab, minlength=R)
        hits += h
        counts += c
        for k in np.flatnonzero(c):
            per_trial[k].append(h[k] / c[k])
    total = counts.sum()
    out = []
    for k in range(R):
        cov = hits[k] / counts[k] if counts[k] else math.nan
        se = _between_trial_se(np.array(per_trial[k]), cov, counts[k]) if counts[k] else math.nan
        out.append(RegionCoverage(names[k], int(counts[k]), int(hits[k]), cov, se,
                                  counts[k] / total if total else math.nan, bool(counts[k] < min_points)))
    return out


def recombine(table: list[RegionCoverage]) -> float:
    """``sum_r mass_r * coverage_r`` over nonempty regions."""
    return float(sum(row.mass * row.coverage for row in table if row.n_points))


def accounting_identity_holds(reports, region: RegionSpec) -> bool:
    """Region counts partition the points and recombine to the marginal coverage."""
    table = conditional_coverage(reports, region, min_points=0)
    marg = marginal_coverage(reports)
    counts_ok = sum(r.n_points for r in table) == marg.n_points
    hits_ok = sum(r.n_covered for r in table) == marg.n_covered
    return counts_ok and hits_ok and abs(recombine(table) - marg.coverage) <= 1e-12


# -- curves --------------------------------------------------------------------------

@dataclass(frozen=True)
class Curve:
    x: np.ndarray
    n_points: np.ndarray
    coverage: np.ndarray
    flagged: np.ndarray


def local_coverage_curve(reports, radius: float = 0.4, centers=None, min_points: int = 20) -> Curve:
    """Coverage over test points within ``radius`` of each center (``d = 1``)."""
    reports = _as_list(reports)
    X = np.concatenate([r.X for r in reports])
    if X.shape[1] != 1:
        raise ContractViolation("local coverage curves need one-dimensional features")
    cov = np.concatenate([r.covered for r in reports])
    if centers is None:
        centers = np.round(np.arange(-30, 31) * 0.1, 10)
    centers = np.asarray(centers, dtype=float)
    x = X[:, 0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cs = np.concatenate([[0], np.cumsum(cov[order])])
    lo = np.searchsorted(xs, centers - radius, side="left")
    hi = np.searchsorted(xs, centers + radius, side="right")
    n = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (cs[hi] - cs[lo]) / n
    missing = n < min_points
    return Curve(centers, n, np.where(missing, np.nan, c), missing)


def sliding_window_coverage(reports, column: int = 0, mass: float = 0.05, points=None) -> Curve:
    """Coverage within a window holding ``mass`` of the pooled covariate values.

    At ``x`` the window takes half the points just below ``x`` and half at or
    above it, i.e. ``[x - D0, x + D1)``. Near the boundary the short side
    keeps what exists, the other side is extended, and the point is flagged.
    """
    reports = _as_list(reports)
    if not 0 < mass <= 1:
        raise ContractViolation("mass must lie in (0, 1]")
    v = np.concatenate([r.X[:, column] for r in reports])
    cov = np.concatenate([r.covered for r in reports])
    order = np.argsort(v, kind="stable")
    vs = v[order]
    cs = np.concatenate([[0], np.cumsum(cov[order])])
    N = vs.size
    K = max(2, int(round(mass * N)))
    if points is None:
        points = np.quantile(vs, np.linspace(0.01, 0.99, 99))
    points = np.asarray(points, dtype=float)
    pos = np.searchsorted(vs, points, side="left")
    left = np.minimum(K // 2, pos)
    right = np.minimum(K - left, N - pos)
    left = np.minimum(K - right, pos)
    flagged = (left != K // 2) | (right != K - K // 2)
    lo, hi = pos - left, pos + right
    n = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (cs[hi] - cs[lo]) / n
    return Curve(points, n, c, flagged)


def window_bounds(values, x: float, mass: float = 0.05) -> tuple[float, float]:
    """Covariate range ``[lo, hi]`` of the window :func:`sliding_window_coverage` uses at ``x``."""
    vs = np.sort(np.asarray(values, dtype=float))
    N = vs.size
    K = max(2, int(round(mass * N)))
    pos = int(np.searchsorted(vs, x, side="left"))
    left = min(K // 2, pos)
    right = min(K - left, N - pos)
    left = min(K - right, pos)
    return float(vs[pos - left]), float(vs[pos + right - 1])


# -- widths --------------------------------------------------------------------------

@dataclass(frozen=True)
class WidthStats:
    median: float
    mean: float
    mean_finite: float
    fraction_infinite: float
    n_points: int


def width_stats(reports, mask=None) -> WidthStats:
    reports = _as_list(reports)
    w = []
    for i, r in enumerate(reports):
        wi = r.width
        if mask is not None:
            wi = wi[np.asarray(mask[i], dtype=bool)]
        w.append(wi)
    w = np.concatenate(w)
    if w.size == 0:
        return WidthStats(math.nan, math.nan, math.nan, math.nan, 0)
    inf = np.isinf(w)
    fin = w[~inf]
    return WidthStats(
        float(np.median(w)),
        float(np.mean(w)),
        float(fin.mean()) if fin.size else math.nan,
        float(inf.mean()),
        int(w.size),
    )


# -- randomization variability ---------------------------------------------------------

@dataclass(frozen=True)
class DeviationResult:
    D: float
    n_points: int
    excluded: int
    per_point: np.ndarray


def mad_over_median(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``MAD / median`` and a validity mask (median finite and positive)."""
    W = np.asarray(W, dtype=float)
    med = np.median(W, axis=1)
    ok = np.isfinite(med) & (med > 0)
    with np.errstate(invalid="ignore"):
        mad = np.median(np.abs(W - med[:, None]), axis=1)
        ratio = np.where(ok, mad / np.where(ok, med, 1.0), np.nan)
    return ratio, ok


def deviation_from_widths(W: np.ndarray) -> DeviationResult:
    """``D`` from a ``(points, redraws)`` matrix of widths."""
    if W.shape[1] < 30:
        raise ContractViolation("need at least 30 redraws per point")
    ratio, ok = mad_over_median(W)
    D = float(ratio[ok].mean()) if ok.any() else math.nan
    return DeviationResult(D, int(ok.sum()), int((~ok).sum()), ratio)
