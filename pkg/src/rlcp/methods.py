"""Split CP, weighted CP, baseLCP, calLCP, RLCP and m-RLCP.

Every method is expressed as a p-value over the test score, evaluated on
the ``2m + 1`` score regions of :mod:`rlcp.wdist` and inverted to a
threshold. ``U = 1`` gives the deterministic method; a uniform ``U`` shared
across all candidate scores gives the smoothed one.

Randomness is drawn from per-test-point streams: test point ``t`` of a batch
uses ``rng.child(t, "prototype")`` for the synthetic prototype(s) and
``rng.child(t, "smooth")`` for ``U``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .core import (
    AbsoluteResidualScore,
    AnchorIsolated,
    ContractViolation,
    Dataset,
    PredictionSet,
    RngStream,
    as_generator,
    as_matrix,
    check_alpha,
)
from .kernels import FlatKernel, Kernel, parse_kernel
from .wdist import ScoreGrid

METHODS = ("split", "wcp", "base-lcp", "cal-lcp", "rlcp", "m-rlcp")
_ALIASES = {
    "split": "split",
    "splitcp": "split",
    "wcp": "wcp",
    "baselcp": "base-lcp",
    "base-lcp": "base-lcp",
    "callcp": "cal-lcp",
    "cal-lcp": "cal-lcp",
    "rlcp": "rlcp",
    "mrlcp": "m-rlcp",
    "m-rlcp": "m-rlcp",
}

# T-score comparisons in calLCP: T values are ratios of kernel sums in [0, 1]
TIE_TOL = 1e-11


@dataclass(frozen=True)
class MethodConfig:
    method: str
    alpha: float = 0.1
    kernel: Kernel | None = None
    smoothed: bool = False
    m: int = 1
    likelihood_ratio: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        method = _ALIASES.get(self.method.lower())
        if method is None:
            raise ContractViolation(f"unknown method {self.method!r}")
        object.__setattr__(self, "method", method)
        check_alpha(self.alpha)
        if int(self.m) < 1:
            raise ContractViolation("m must be at least 1")
        if method in ("base-lcp", "cal-lcp", "rlcp", "m-rlcp") and self.kernel is None:
            raise ContractViolation(f"{method} needs a kernel")
        if method == "wcp" and self.likelihood_ratio is None:
            object.__setattr__(self, "likelihood_ratio", constant_ratio)

    @property
    def label(self) -> str:
        name = self.method.replace("-", "")
        if self.method == "m-rlcp":
            name += f":m={self.m}"
        return name

    def replace(self, **kw) -> "MethodConfig":
        fields = dict(
            method=self.method,
            alpha=self.alpha,
            kernel=self.kernel,
            smoothed=self.smoothed,
            m=self.m,
            likelihood_ratio=self.likelihood_ratio,
        )
        fields.update(kw)
        return MethodConfig(**fields)


def constant_ratio(X):
    return np.ones(np.asarray(X).shape[0])


def parse_method(text: str, alpha=0.1, kernel=None, smoothed=False) -> MethodConfig:
    """Parse ``split|wcp|baselcp|callcp|rlcp|mrlcp:m=10``."""
    name, _, rest = text.strip().partition(":")
    m = 1
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        if key.strip() != "m":
            raise ContractViolation(f"unknown method parameter {item!r}")
        m = int(val)
    return MethodConfig(name, alpha=alpha, kernel=kernel, smoothed=smoothed, m=m)


@dataclass
class BatchResult:
    """Prediction sets for a batch of test points.

    ``pvalue`` is filled when test responses were supplied. ``prototypes``
    is ``(B, d)`` for RLCP and ``(B, m, d)`` for m-RLCP.
    """

    threshold: np.ndarray
    closed: np.ndarray
    center: np.ndarray
    alpha: float
    pvalue: np.ndarray | None = None
    test_score: np.ndarray | None = None
    prototypes: np.ndarray | None = None
    u: np.ndarray | None = None

    def __len__(self):
        return self.threshold.shape[0]

    def prediction_set(self, i: int) -> PredictionSet:
        return PredictionSet(float(self.threshold[i]), bool(self.closed[i]), float(self.center[i]), self.alpha)

    @property
    def covered(self) -> np.ndarray:
        s = self.test_score
        return np.where(self.closed, s <= self.threshold, s < self.threshold)


@dataclass(frozen=True)
class RlcpOutput:
    prediction: PredictionSet
    prototype: np.ndarray
    u: float | None = None


# -- numba sweep for calLCP ----------------------------------------------------

@numba.njit(cache=True)
def _fen_add(tree, i, v):
    i += 1
    while i < tree.shape[0]:
        tree[i] += v
        i += i & (-i)


@numba.njit(cache=True)
def _fen_prefix(tree, i):
    # number of inserted ranks < i
    s = 0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@numba.njit(cache=True)
def _callcp_region_pvalues(group_starts, t_lo, t_hi, t_at, t_gap, u, tol):
    """Region p-values of the rank-based full-CP score for each test row.

    Calibration points are in score order; ``group_starts`` has ``m + 1``
    entries delimiting the unique-score groups. ``t_lo[b, i]`` is the score
    of point ``i`` when the test score is at least ``S_i`` and ``t_hi`` when
    it is below. ``t_at[b, k]`` / ``t_gap[b, k]`` are the test point's own
    score at ``u_{k+1}`` and just above ``u_k``.
    """
    B, n = t_lo.shape
    m = group_starts.shape[0] - 1
    out = np.empty((B, 2 * m + 1))
    for b in range(B):
        lo_order = np.argsort(t_lo[b])
        hi_order = np.argsort(t_hi[b])
        lo_vals = t_lo[b][lo_order]
        hi_vals = t_hi[b][hi_order]
        lo_rank = np.empty(n, np.int64)
        hi_rank = np.empty(n, np.int64)
        for r in range(n):
            lo_rank[lo_order[r]] = r
            hi_rank[hi_order[r]] = r
        fen_lo = np.zeros(n + 1, np.int64)
        fen_hi = np.zeros(n + 1, np.int64)
        for i in range(n):
            _fen_add(fen_hi, hi_rank[i], 1)
        n_lo = 0
        n_hi = n
        ub = u[b]
        for k in range(m + 1):
            if k > 0:
                for i in range(group_starts[k - 1], group_starts[k]):
                    _fen_add(fen_hi, hi_rank[i], -1)
                    _fen_add(fen_lo, lo_rank[i], 1)
                n_hi -= group_starts[k] - group_starts[k - 1]
                n_lo += group_starts[k] - group_starts[k - 1]
            for which in range(2):
                if which == 0:
                    if k == 0:
                        continue
                    t = t_at[b, k - 1]
                    region = 2 * k - 1
                else:
                    t = t_gap[b, k]
                    region = 2 * k
                j_gt = np.searchsorted(lo_vals, t + tol, side="right")
                j_ge = np.searchsorted(lo_vals, t - tol, side="left")
                gt = n_lo - _fen_prefix(fen_lo, j_gt)
                ge = n_lo - _fen_prefix(fen_lo, j_ge)
                j_gt = np.searchsorted(hi_vals, t + tol, side="right")
                j_ge = np.searchsorted(hi_vals, t - tol, side="left")
                gt += n_hi - _fen_prefix(fen_hi, j_gt)
                ge += n_hi - _fen_prefix(fen_hi, j_ge)
                out[b, region] = (gt + ub * (ge - gt + 1)) / (n + 1)
    return out


# -- the engine ----------------------------------------------------------------

class Conformalizer:
    """Runs one method against a fixed calibration set.

    Per-calibration-set precomputation (score sorting, and for calLCP the
    test-independent kernel sums) happens once; ``predict`` then handles any
    number of test points.
    """

    def __init__(self, config: MethodConfig, cal: Dataset, sf: AbsoluteResidualScore):
        if cal.n < 1:
            raise ContractViolation("calibration set is empty")
        self.config = config
        self.cal = cal
        self.sf = sf
        self.cal_scores = sf.scores(cal.features, cal.response)
        self.grid = ScoreGrid(self.cal_scores)
        self._callcp = None

    # weights --------------------------------------------------------------

    def _weights_from_logs(self, L, l_test, isolated_ok):
        top = np.maximum(L.max(axis=1), l_test)
        isolated = top == -np.inf
        if isolated.any() and not isolated_ok:
            raise AnchorIsolated("all kernel values are zero at the anchor")
        top = np.where(isolated, 0.0, top)
        E = np.exp(L - top[:, None])
        e_test = np.exp(l_test - top)
        z = E.sum(axis=1) + e_test
        z = np.where(isolated, 1.0, z)
        return E / z[:, None], e_test / z, isolated

    def _weighted_P(self, W, w_test, u, isolated=None):
        P = self.grid.weighted_region_pvalues(self.grid.merge(W), w_test, u)
        if isolated is not None and isolated.any():
            # only the +inf atom would carry mass: the full set
            P[isolated] = 1.0
        return P

    def _anchor_logs(self, anchors, X_test):
        k = self.config.kernel
        L = k.log_pairwise(self.cal.features, anchors).T
        l_test = k.log_paired(X_test, anchors)
        return L, l_test

    # per-method region p-values ---------------------------------------------

    def _region_P(self, X, u, prototypes):
        cfg = self.config
        B = X.shape[0]
        if cfg.method == "split":
            n = self.cal.n
            W = np.full((B, n), 1.0 / (n + 1))
            return self._weighted_P(W, np.full(B, 1.0 / (n + 1)), u)
        if cfg.method == "wcp":
            r_cal = np.asarray(cfg.likelihood_ratio(self.cal.features), dtype=float)
            r_test = np.asarray(cfg.likelihood_ratio(X), dtype=float)
            if np.any(r_cal < 0) or np.any(r_test < 0):
                raise ContractViolation("likelihood ratios must be nonnegative")
            z = r_cal.sum() + r_test
            if np.any(z <= 0):
                raise AnchorIsolated("all likelihood ratios are zero")
            return self._weighted_P(r_cal[None, :] / z[:, None], r_test / z, u)
        if cfg.method == "base-lcp":
            L, l_test = self._anchor_logs(X, X)
            W, w_test, iso = self._weights_from_logs(L, l_test, isolated_ok=True)
            return self._weighted_P(W, w_test, u, iso)
        if cfg.method == "rlcp":
            L, l_test = self._anchor_logs(prototypes, X)
            W, w_test, iso = self._weights_from_logs(L, l_test, isolated_ok=True)
            return self._weighted_P(W, w_test, u, iso)
        if cfg.method == "m-rlcp":
            P = None
            for r in range(cfg.m):
                L, l_test = self._anchor_logs(prototypes[:, r, :], X)
                W, w_test, iso = self._weights_from_logs(L, l_test, isolated_ok=True)
                Pr = self._weighted_P(W, w_test, u[:, r], iso)
                P = Pr if P is None else P + Pr
            return P / cfg.m
        if cfg.method == "cal-lcp":
            return self._callcp_P(X, u)
        raise AssertionError(cfg.method)

    def _callcp_state(self):
        if self._callcp is None:
            k = self.config.kernel
            Xc = self.cal.features
            g = self.grid
            # row i: log H(X_j, X_i), rows and columns in score order
            Lcc = k.log_pairwise(Xc, Xc).T[np.ix_(g.order, g.order)]
            row_max = Lcc.max(axis=1)
            row_max = np.where(row_max == -np.inf, 0.0, row_max)
            E = np.exp(Lcc - row_max[:, None])
            S = g.sorted
            below = S[None, :] < S[:, None]
            num = (E * below).sum(axis=1)
            den = E.sum(axis=1)
            starts = np.concatenate([g.starts, [S.size]]).astype(np.int64)
            self._callcp = (row_max, num, den, starts)
        return self._callcp

    def _callcp_P(self, X, u):
        k = self.config.kernel
        g = self.grid
        row_max, num, den, starts = self._callcp_state()
        Xc = self.cal.features[g.order]
        # c[b, i] = H(x_b, X_i) on the scale of row i
        c = np.exp(k.log_pairwise(X, Xc) - row_max[None, :])
        z = den[None, :] + c
        with np.errstate(invalid="ignore", divide="ignore"):
            t_lo = np.where(z > 0, num[None, :] / z, 0.0)
            t_hi = np.where(z > 0, (num[None, :] + c) / z, 0.0)
        # the test point's own weights w_{n+1, j}
        L = k.log_pairwise(Xc, X).T
        l_self = k.log_paired(X, X)
        Wt, _, _ = self._weights_from_logs(L, l_self, isolated_ok=True)
        merged = np.add.reduceat(Wt, g.starts, axis=1)
        t_gap = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(merged, axis=1)], axis=1)
        t_at = t_gap[:, :-1]
        return _callcp_region_pvalues(
            starts,
            np.ascontiguousarray(t_lo),
            np.ascontiguousarray(t_hi),
            np.ascontiguousarray(t_at),
            np.ascontiguousarray(t_gap),
            np.ascontiguousarray(u, dtype=float),
            TIE_TOL,
        )

    # randomness -------------------------------------------------------------

    def draws(self, X, rng, offset=0, point_rngs=None):
        """Prototypes and smoothing uniforms for each test point.

        Point ``t`` draws from ``rng.child(offset + t)`` unless ``point_rngs``
        names its stream explicitly. A plain generator is shared by all
        points, prototype first.
        """
        cfg = self.config
        B = X.shape[0]
        needs_proto = cfg.method in ("rlcp", "m-rlcp")
        reps = cfg.m if cfg.method == "m-rlcp" else 1
        protos = None
        if needs_proto:
            protos = np.empty((B, reps, X.shape[1]))
        u = np.ones((B, reps))
        shared = None if isinstance(rng, RngStream) or point_rngs is not None else as_generator(rng)
        for t in range(B):
            stream = point_rngs[t] if point_rngs is not None else rng
            if shared is not None:
                pg = ug = shared
            elif isinstance(stream, RngStream):
                if point_rngs is None:
                    stream = stream.child(offset + t)
                pg = stream.child("prototype").generator()
                ug = stream.child("smooth").generator()
            else:
                pg = ug = as_generator(stream)
            if needs_proto:
                protos[t] = cfg.kernel.sample_many(X[t], pg, reps)
            if cfg.smoothed:
                u[t] = ug.random(reps)
        return protos, u

    def predict(self, X_test, rng=None, y_test=None, offset=0, prototypes=None, u=None,
                point_rngs=None, chunk=500) -> BatchResult:
        """Prediction sets for every row of ``X_test``.

        ``prototypes`` / ``u`` override the random draws (RLCP prototypes as
        ``(B, d)``; m-RLCP as ``(B, m, d)``).
        """
        cfg = self.config
        X = as_matrix(X_test, self.cal.d)
        B = X.shape[0]
        drawn_p, drawn_u = (None, None)
        if (prototypes is None and cfg.method in ("rlcp", "m-rlcp")) or (u is None and cfg.smoothed):
            if rng is None and point_rngs is None:
                raise ContractViolation(f"{cfg.method} needs an rng stream")
            drawn_p, drawn_u = self.draws(X, rng, offset, point_rngs)
        if prototypes is None:
            prototypes = drawn_p
        else:
            prototypes = np.asarray(prototypes, dtype=float).reshape(B, -1, X.shape[1])
        if u is None:
            u = drawn_u if cfg.smoothed else np.ones((B, cfg.m if cfg.method == "m-rlcp" else 1))
        else:
            u = np.asarray(u, dtype=float).reshape(B, -1)
        thr = np.empty(B)
        closed = np.empty(B, dtype=bool)
        pval = np.empty(B) if y_test is not None else None
        s_test = None
        if y_test is not None:
            s_test = self.sf.scores(X, y_test)
        for lo in range(0, B, chunk):
            sl = slice(lo, min(B, lo + chunk))
            Xs = X[sl]
            if cfg.method == "m-rlcp":
                P = self._region_P(Xs, u[sl], prototypes[sl])
            elif cfg.method == "rlcp":
                P = self._region_P(Xs, u[sl, 0], prototypes[sl, 0])
            else:
                P = self._region_P(Xs, u[sl, 0], None)
            thr[sl], closed[sl] = self.grid.invert(P, cfg.alpha)
            if s_test is not None:
                reg = self.grid.region_of(s_test[sl])
                pval[sl] = P[np.arange(P.shape[0]), reg]
        protos_out = None
        if prototypes is not None:
            protos_out = prototypes[:, 0, :] if cfg.method == "rlcp" else prototypes
        return BatchResult(
            threshold=thr,
            closed=closed,
            center=self.sf.predict(X),
            alpha=cfg.alpha,
            pvalue=pval,
            test_score=s_test,
            prototypes=protos_out,
            u=(u[:, 0] if cfg.method != "m-rlcp" else u) if cfg.smoothed else None,
        )


# -- per-point API ---------------------------------------------------------------

def _single(config, cal, sf, x_test, rng, **kw) -> BatchResult:
    x = np.asarray(x_test, dtype=float).reshape(1, -1)
    return Conformalizer(config, cal, sf).predict(x, point_rngs=None if rng is None else [rng], **kw)


def split_cp(cal, sf, x_test, alpha=0.1, smoothed=False, rng=None) -> PredictionSet:
    r = _single(MethodConfig("split", alpha, smoothed=smoothed), cal, sf, x_test, rng)
    return r.prediction_set(0)


def weighted_cp(cal, sf, x_test, likelihood_ratio_fn, alpha=0.1, smoothed=False, rng=None) -> PredictionSet:
    cfg = MethodConfig("wcp", alpha, smoothed=smoothed, likelihood_ratio=likelihood_ratio_fn)
    return _single(cfg, cal, sf, x_test, rng).prediction_set(0)


def base_lcp(cal, sf, x_test, kernel, alpha=0.1, smoothed=False, rng=None) -> PredictionSet:
    cfg = MethodConfig("base-lcp", alpha, kernel=kernel, smoothed=smoothed)
    return _single(cfg, cal, sf, x_test, rng).prediction_set(0)


def cal_lcp(cal, sf, x_test, kernel, alpha=0.1, smoothed=False, rng=None, u=None) -> PredictionSet:
    cfg = MethodConfig("cal-lcp", alpha, kernel=kernel, smoothed=smoothed)
    return _single(cfg, cal, sf, x_test, rng, u=None if u is None else [u]).prediction_set(0)


def rlcp(cal, sf, x_test, kernel, alpha=0.1, smoothed=False, rng=None, prototype=None, u=None) -> RlcpOutput:
    cfg = MethodConfig("rlcp", alpha, kernel=kernel, smoothed=smoothed)
    r = _single(
        cfg, cal, sf, x_test, rng,
        prototypes=None if prototype is None else np.asarray(prototype, dtype=float)[None, :],
        u=None if u is None else [u],
    )
    return RlcpOutput(r.prediction_set(0), r.prototypes[0], None if r.u is None else float(r.u[0]))


def m_rlcp(cal, sf, x_test, kernel, alpha=0.1, m=10, smoothed=False, rng=None) -> PredictionSet:
    cfg = MethodConfig("m-rlcp", alpha, kernel=kernel, smoothed=smoothed, m=m)
    return _single(cfg, cal, sf, x_test, rng).prediction_set(0)


def flat_kernel_for(data: Dataset, margin: float = 1.0) -> FlatKernel:
    """A flat kernel whose support covers ``data`` with some margin."""
    X = data.features
    return FlatKernel(float(X.min()) - margin, float(X.max()) + margin, data.d)


__all__ = [
    "METHODS",
    "MethodConfig",
    "BatchResult",
    "RlcpOutput",
    "Conformalizer",
    "parse_method",
    "parse_kernel",
    "split_cp",
    "weighted_cp",
    "base_lcp",
    "cal_lcp",
    "rlcp",
    "m_rlcp",
    "flat_kernel_for",
]
