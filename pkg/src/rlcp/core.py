"""Shared data model: datasets, score functions, prediction sets, RNG streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class AnchorIsolated(ArithmeticError):
    """Every localization weight vanished at the requested anchor."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus response vector.

    Categorical columns hold integer codes; ``levels`` maps a categorical
    column index to the tuple of labels the codes refer to.
    """

    features: np.ndarray
    response: np.ndarray
    categorical: tuple[bool, ...] = ()
    names: tuple[str, ...] = ()
    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.response, dtype=float).ravel()
        if X.ndim != 2:
            raise ContractViolation("features must be a 2-d matrix")
        if X.shape[0] != y.shape[0]:
            raise ContractViolation(
                f"features have {X.shape[0]} rows but response has {y.shape[0]}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ContractViolation("dataset contains missing or non-finite values")
        cat = tuple(bool(c) for c in self.categorical) or (False,) * X.shape[1]
        if len(cat) != X.shape[1]:
            raise ContractViolation("categorical tags must match the column count")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ContractViolation("names must match the column count")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "response", _frozen(y))
        object.__setattr__(self, "categorical", cat)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.response[idx],
            self.categorical,
            self.names,
            self.levels,
        )


@dataclass(frozen=True)
class AbsoluteResidualScore:
    """The residual score ``s(x, y) = |y - f(x)|`` for a fitted predictor.

    ``predictor`` maps an ``(m, d)`` feature matrix to ``m`` predictions.
    """

    predictor: Callable[[np.ndarray], np.ndarray]
    n_features: int

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ContractViolation(
                f"score fitted on {self.n_features} features, got {X.shape[1]}"
            )
        return X

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.predictor(self._check(X)), dtype=float)

    def scores(self, X, y) -> np.ndarray:
        return np.abs(np.asarray(y, dtype=float) - self.predict(X))


def score(sf: AbsoluteResidualScore, x, y) -> float:
    """Score a single ``(x, y)`` pair."""
    x = np.asarray(x, dtype=float).ravel()
    return float(sf.scores(x[None, :], [y])[0])


@dataclass(frozen=True)
class PredictionSet:
    """``{y : s(x, y) <= threshold}`` (or ``<`` when ``closed`` is False).

    An empty set is encoded by ``threshold = -inf``; the full set by
    ``threshold = +inf``.
    """

    threshold: float
    closed: bool = True
    center: float = 0.0
    alpha: float = 0.1

    @property
    def is_full(self) -> bool:
        return self.threshold == np.inf

    @property
    def is_empty(self) -> bool:
        return self.threshold == -np.inf or (not self.closed and self.threshold <= 0.0)

    @property
    def width(self) -> float:
        if self.is_empty:
            return 0.0
        return 2.0 * self.threshold

    @property
    def interval(self) -> tuple[float, float]:
        if self.is_empty:
            return (np.nan, np.nan)
        return (self.center - self.threshold, self.center + self.threshold)

    def contains_score(self, s: float) -> bool:
        return bool(s <= self.threshold) if self.closed else bool(s < self.threshold)


def set_contains(ps: PredictionSet, sf: AbsoluteResidualScore, x, y) -> bool:
    """Membership test; the set is closed at the threshold by default."""
    return ps.contains_score(score(sf, x, y))


def contains_scores(threshold, closed, s) -> np.ndarray:
    """Vectorized membership for arrays of thresholds and scores."""
    threshold = np.asarray(threshold, dtype=float)
    s = np.asarray(s, dtype=float)
    return np.where(closed, s <= threshold, s < threshold)


def widths(threshold, closed) -> np.ndarray:
    threshold = np.asarray(threshold, dtype=float)
    empty = (threshold == -np.inf) | (~np.asarray(closed) & (threshold <= 0.0))
    with np.errstate(invalid="ignore"):
        return np.where(empty, 0.0, 2.0 * threshold)


# -- randomness ---------------------------------------------------------------

def _label_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ContractViolation("stream labels must be nonnegative")
        return int(part)
    digest = hashlib.blake2b(str(part).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, label)``.

    Streams are derived with a seed sequence keyed on the label, feeding a
    counter-based Philox generator, so the draws depend only on the label
    and never on evaluation order.
    """

    seed: int
    label: tuple = ()

    def child(self, *parts) -> "RngStream":
        return RngStream(self.seed, self.label + tuple(parts))

    def generator(self) -> np.random.Generator:
        key = tuple(_label_word(p) for p in self.label)
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def point_streams(base: RngStream, n_points: int, purpose: str) -> list[np.random.Generator]:
    """One generator per test point, labelled ``(..., point, purpose)``."""
    return [base.child(i, purpose).generator() for i in range(n_points)]


def as_matrix(x, d: int | None = None) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if d is None or X.shape[0] == d else X[:, None]
    if d is not None and X.shape[1] != d:
        raise ContractViolation(f"expected {d} features, got {X.shape[1]}")
    return X


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ContractViolation(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def stack_sets(sets: Sequence[PredictionSet]):
    return (
        np.array([s.threshold for s in sets]),
        np.array([s.closed for s in sets]),
    )
