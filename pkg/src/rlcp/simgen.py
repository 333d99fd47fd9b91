"""Synthetic settings, base predictors, oracle intervals and tilted test draws.

Settings (``X`` features, ``Y | X ~ N(mu(X), v(X))``):

- ``setting1``: ``X ~ N(0, 1)``, ``mu = x/2``, ``v = |sin x|``
- ``setting2``: ``X ~ N(0, 1)``, ``mu = x/2``, ``v = (4/3) phi(2x/3)``
- ``mvsin:d``: ``X ~ N_d(0, I)``, ``mu = sum x_i / 2``, ``v = sum |sin x_i|``
- ``cube:d``: ``X ~ U([-3, 3]^d)`` with the ``mvsin`` conditional

``v`` is a standard deviation under the ``std`` convention and a variance
under ``variance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from .core import AbsoluteResidualScore, ContractViolation, Dataset, RngStream, as_generator, as_matrix

SETTINGS = ("setting1", "setting2", "mvsin", "cube")
CONVENTIONS = ("std", "variance")
Z95 = float(norm.ppf(0.95))
BLOCK = 4096


class FitDegenerate(ArithmeticError):
    """The regression system is singular even after regularization."""


class TiltDegenerate(ArithmeticError):
    """Rejection sampling accepts too rarely to be practical."""


@dataclass(frozen=True)
class SettingSpec:
    name: str
    d: int = 1
    noise: str = "std"

    def __post_init__(self):
        if self.name not in SETTINGS:
            raise ContractViolation(f"unknown setting {self.name!r}")
        if self.noise not in CONVENTIONS:
            raise ContractViolation(f"noise convention must be one of {CONVENTIONS}")
        if self.name in ("setting1", "setting2") and self.d != 1:
            raise ContractViolation(f"{self.name} is univariate")
        if self.d < 1:
            raise ContractViolation("dimension must be positive")

    @property
    def label(self) -> str:
        base = self.name if self.name in ("setting1", "setting2") else f"{self.name}:d={self.d}"
        return base if self.noise == "std" else base + ",noise=variance"

    def features(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.name == "cube":
            return gen.uniform(-3.0, 3.0, size=(n, self.d))
        return gen.standard_normal((n, self.d))

    def mean(self, X) -> np.ndarray:
        X = as_matrix(X, self.d)
        return X.sum(axis=1) / 2.0

    def spread(self, X) -> np.ndarray:
        """The second Gaussian parameter ``v(x)`` as written."""
        X = as_matrix(X, self.d)
        if self.name == "setting2":
            return (4.0 / 3.0) * norm.pdf(2.0 * X[:, 0] / 3.0)
        return np.abs(np.sin(X)).sum(axis=1)

    def sigma(self, X) -> np.ndarray:
        v = self.spread(X)
        return v if self.noise == "std" else np.sqrt(v)

    def response(self, X, gen: np.random.Generator) -> np.ndarray:
        return self.mean(X) + self.sigma(X) * gen.standard_normal(as_matrix(X, self.d).shape[0])


def parse_setting(text: str, noise: str = "std") -> SettingSpec:
    """``setting1``, ``setting2``, ``mvsin:d=20``, ``cube:d=10``."""
    name, _, rest = text.strip().partition(":")
    d = 1
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        key = key.strip()
        if key == "d":
            d = int(val)
        elif key == "noise":
            noise = val.strip()
        else:
            raise ContractViolation(f"unknown setting parameter {item!r}")
    return SettingSpec(name.strip().lower(), d, noise)


def _blocks(rng, n):
    """Yield ``(size, generator)`` per block of rows; blocks use disjoint streams."""
    if isinstance(rng, RngStream):
        for b, lo in enumerate(range(0, n, BLOCK)):
            yield min(BLOCK, n - lo), rng.child("rows", b).generator()
    else:
        yield n, as_generator(rng)


def generate(spec: SettingSpec, n: int, rng) -> Dataset:
    """``n`` i.i.d. draws. With an ``RngStream`` the first rows do not depend on ``n``."""
    if n < 1:
        raise ContractViolation("n must be positive")
    Xs, ys = [], []
    for size, gen in _blocks(rng, n):
        X = spec.features(size, gen)
        Xs.append(X)
        ys.append(spec.response(X, gen))
    return Dataset(np.concatenate(Xs), np.concatenate(ys))


@dataclass(frozen=True)
class OracleInterval:
    lower: float
    upper: float


def oracle_bounds(spec: SettingSpec, X) -> tuple[np.ndarray, np.ndarray]:
    mu = spec.mean(X)
    half = Z95 * spec.sigma(X)
    return mu - half, mu + half


def oracle_interval(spec: SettingSpec, x) -> OracleInterval:
    """5th and 95th conditional percentiles at ``x``."""
    lo, hi = oracle_bounds(spec, np.asarray(x, dtype=float).reshape(1, spec.d))
    return OracleInterval(float(lo[0]), float(hi[0]))


def sample_tilted(spec: SettingSpec, g: Callable, bound: float, n: int, rng,
                  max_proposals: int = 1_000_000, min_rate: float = 1e-4) -> Dataset:
    """Draws from ``(P_X o g) x P_{Y|X}`` by rejection from ``P_X``.

    ``g`` maps an ``(m, d)`` array to values in ``[0, bound]``.
    """
    if not bound > 0:
        raise ContractViolation("the bound on g must be positive")
    gen = as_generator(rng)
    kept = []
    total = 0
    proposals = 0
    batch = max(1024, 4 * n)
    while total < n:
        X = spec.features(batch, gen)
        gx = np.asarray(g(X), dtype=float)
        if np.any(gx < 0) or np.any(gx > bound * (1 + 1e-12)):
            raise ContractViolation("g must lie in [0, bound]")
        acc = gen.random(batch) * bound < gx
        proposals += batch
        kept.append(X[acc])
        total += int(acc.sum())
        if proposals >= max_proposals and total < min_rate * proposals:
            raise TiltDegenerate(f"accepted {total} of {proposals} proposals")
    X = np.concatenate(kept)[:n]
    return Dataset(X, spec.response(X, gen))


# -- base predictors --------------------------------------------------------------

def _design(X: np.ndarray, categorical, levels=None):
    """Intercept, numeric columns, and one-hot dummies (first level dropped)."""
    cols = [np.ones(X.shape[0])]
    levels = levels if levels is not None else {}
    seen = {}
    for j in range(X.shape[1]):
        if categorical and categorical[j]:
            codes = levels.get(j)
            if codes is None:
                codes = np.unique(X[:, j])
            seen[j] = codes
            for c in codes[1:]:
                cols.append((X[:, j] == c).astype(float))
        else:
            cols.append(X[:, j])
    return np.column_stack(cols), seen


def fit_linear(pretrain: Dataset, ridge: float = 1e-8) -> AbsoluteResidualScore:
    """Least squares with intercept via regularized normal equations.

    The ridge only conditions the factorization; a few refinement steps
    bring full-rank fits back to the ordinary least-squares solution.
    """
    X, y = pretrain.features, pretrain.response
    if X.shape[0] <= X.shape[1]:
        raise ContractViolation("linear fit needs more rows than features")
    cat = pretrain.categorical if any(pretrain.categorical) else None
    D, seen = _design(X, cat)
    G = D.T @ D
    G = G + ridge * (np.trace(G) / G.shape[0]) * np.eye(G.shape[0])
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise FitDegenerate("normal equations are singular") from None
    solve = lambda r: np.linalg.solve(L.T, np.linalg.solve(L, r))
    beta = solve(D.T @ y)
    # refinement against the unregularized system removes the ridge bias
    for _ in range(3):
        beta = beta + solve(D.T @ (y - D @ beta))
    if not np.all(np.isfinite(beta)):
        raise FitDegenerate("non-finite coefficients")

    def predict(Z):
        return _design(Z, cat, seen)[0] @ beta

    predict.coef = beta
    return AbsoluteResidualScore(predict, X.shape[1])


def fit_knn(pretrain: Dataset, k: int = 25, chunk: int = 256) -> AbsoluteResidualScore:
    """Mean response of the ``k`` nearest pretraining points in standardized units.

    Distance ties go to the lower pretraining index.
    """
    X, y = pretrain.features, pretrain.response
    if not 1 <= k <= X.shape[0]:
        raise ContractViolation(f"k must lie in [1, {X.shape[0]}], got {k}")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = (X - mu) / sd

    def predict(Z):
        Zs = (Z - mu) / sd
        out = np.empty(Z.shape[0])
        for lo in range(0, Z.shape[0], chunk):
            block = Zs[lo:lo + chunk]
            diff = block[:, None, :] - Xs[None, :, :]
            dist = np.einsum("abk,abk->ab", diff, diff)
            idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
            out[lo:lo + chunk] = y[idx].mean(axis=1)
        return out

    return AbsoluteResidualScore(predict, X.shape[1])


def fit_predictor(kind: str, pretrain: Dataset, k: int = 25) -> AbsoluteResidualScore:
    if kind == "linear":
        return fit_linear(pretrain)
    if kind == "knn":
        return fit_knn(pretrain, min(k, pretrain.n))
    raise ContractViolation(f"unknown predictor {kind!r}")
