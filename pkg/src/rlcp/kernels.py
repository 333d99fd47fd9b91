"""Localization kernels ``H(x, x')`` that are densities in ``x'``.

All kernels work in log space: ``log_pairwise(A, B)[a, b] = log H(A[a], B[b])``
with ``-inf`` outside the support. Normalized weights are obtained by
subtracting the largest log value before exponentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import AnchorIsolated, ContractViolation, as_generator, as_matrix


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # exact differences for small inputs, BLAS expansion for large ones
    if A.shape[0] * B.shape[0] * A.shape[1] <= 4_000_000:
        diff = A[:, None, :] - B[None, :, :]
        return np.einsum("abk,abk->ab", diff, diff)
    out = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(out, 0.0, out=out)
    return out


def log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)


class Kernel:
    """Base class. Subclasses implement ``log_pairwise`` and ``sample``."""

    d: int
    kind: str = "kernel"
    symmetric: bool = True

    def log_pairwise(self, A, B) -> np.ndarray:
        raise NotImplementedError

    def eval(self, x, xp) -> float:
        x = as_matrix(x, self.d)
        xp = as_matrix(xp, self.d)
        return float(np.exp(self.log_pairwise(x, xp))[0, 0])

    def log_paired(self, A, B) -> np.ndarray:
        """``log H(A[b], B[b])`` row by row."""
        A = as_matrix(A, self.d)
        B = as_matrix(B, self.d)
        return np.array([self.log_pairwise(a[None], b[None])[0, 0] for a, b in zip(A, B)])

    def log_at(self, centers, anchor) -> np.ndarray:
        """``log H(centers[i], anchor)`` for every row of ``centers``."""
        return self.log_pairwise(as_matrix(centers, self.d), as_matrix(anchor, self.d))[:, 0]

    def sample(self, x, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_many(self, x, rng, m: int) -> np.ndarray:
        """``m`` successive single draws, so the first equals ``sample``."""
        gen = as_generator(rng)
        return np.stack([self.sample(x, gen) for _ in range(m)])

    def unit_offsets(self, rng, size: int) -> np.ndarray:
        """Draws ``xi`` with ``x + h * xi ~ H(x, .)`` for location-scale kernels."""
        raise NotImplementedError

    def with_bandwidth(self, h: float) -> "Kernel":
        raise NotImplementedError

    @property
    def spec(self) -> str:
        raise NotImplementedError


def _check_h(h) -> float:
    h = float(h)
    if not (h > 0 and math.isfinite(h)):
        raise ContractViolation(f"bandwidth must be positive, got {h}")
    return h


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    h: float
    d: int = 1
    kind = "gaussian"

    def __post_init__(self):
        _check_h(self.h)

    @property
    def log_norm(self) -> float:
        return -0.5 * self.d * math.log(2.0 * math.pi * self.h**2)

    def log_pairwise(self, A, B):
        return self.log_norm - _sq_dists(as_matrix(A, self.d), as_matrix(B, self.d)) / (2.0 * self.h**2)

    def log_paired(self, A, B):
        diff = as_matrix(A, self.d) - as_matrix(B, self.d)
        return self.log_norm - (diff * diff).sum(1) / (2.0 * self.h**2)

    def sample(self, x, rng):
        gen = as_generator(rng)
        x = np.asarray(x, dtype=float).ravel()
        return x + self.h * gen.standard_normal(self.d)

    def unit_offsets(self, rng, size):
        return as_generator(rng).standard_normal((size, self.d))

    def with_bandwidth(self, h):
        return GaussianKernel(h, self.d)

    @property
    def spec(self):
        return f"gaussian:h={self.h!r}"


@dataclass(frozen=True)
class BoxKernel(Kernel):
    """Uniform density on the Euclidean ball of radius ``h``."""

    h: float
    d: int = 1
    kind = "box"

    def __post_init__(self):
        _check_h(self.h)

    @property
    def log_norm(self) -> float:
        return -(log_unit_ball_volume(self.d) + self.d * math.log(self.h))

    def log_pairwise(self, A, B):
        sq = _sq_dists(as_matrix(A, self.d), as_matrix(B, self.d))
        return np.where(sq <= self.h**2, self.log_norm, -np.inf)

    def log_paired(self, A, B):
        diff = as_matrix(A, self.d) - as_matrix(B, self.d)
        return np.where((diff * diff).sum(1) <= self.h**2, self.log_norm, -np.inf)

    def _unit_ball(self, gen, size):
        z = gen.standard_normal((size, self.d))
        r = gen.random(size) ** (1.0 / self.d)
        return z / np.linalg.norm(z, axis=1, keepdims=True) * r[:, None]

    def sample(self, x, rng):
        gen = as_generator(rng)
        x = np.asarray(x, dtype=float).ravel()
        z = gen.standard_normal(self.d)
        r = gen.random() ** (1.0 / self.d)
        return x + self.h * r * z / np.linalg.norm(z)

    def unit_offsets(self, rng, size):
        return self._unit_ball(as_generator(rng), size)

    def with_bandwidth(self, h):
        return BoxKernel(h, self.d)

    @property
    def spec(self):
        return f"box:h={self.h!r}"


@dataclass(frozen=True)
class ProductBoxKernel(Kernel):
    """Box in each numeric coordinate, exact match on categorical ones.

    ``bandwidths`` has one entry per column; entries for categorical columns
    are ignored. The density is ``prod_j 1/(2 h_j)`` over numeric columns,
    with counting measure on the categorical ones.
    """

    bandwidths: tuple
    categorical: tuple
    kind = "productbox"

    def __post_init__(self):
        if len(self.bandwidths) != len(self.categorical):
            raise ContractViolation("one bandwidth per column is required")
        for h, c in zip(self.bandwidths, self.categorical):
            if not c:
                _check_h(h)
        if all(self.categorical):
            raise ContractViolation("product-box kernel needs a numeric column")

    @property
    def d(self) -> int:
        return len(self.categorical)

    @property
    def _num(self) -> np.ndarray:
        return ~np.array(self.categorical, dtype=bool)

    @property
    def _h(self) -> np.ndarray:
        return np.array(self.bandwidths, dtype=float)[self._num]

    @property
    def log_norm(self) -> float:
        return -float(np.sum(np.log(2.0 * self._h)))

    def log_pairwise(self, A, B):
        A = as_matrix(A, self.d)
        B = as_matrix(B, self.d)
        num = self._num
        inside = np.ones((A.shape[0], B.shape[0]), dtype=bool)
        for j, h in zip(np.flatnonzero(num), self._h):
            inside &= np.abs(A[:, j][:, None] - B[:, j][None, :]) <= h
        for j in np.flatnonzero(~num):
            inside &= A[:, j][:, None] == B[:, j][None, :]
        return np.where(inside, self.log_norm, -np.inf)

    def log_paired(self, A, B):
        A = as_matrix(A, self.d)
        B = as_matrix(B, self.d)
        num = self._num
        inside = np.all(np.abs(A[:, num] - B[:, num]) <= self._h, axis=1)
        inside &= np.all(A[:, ~num] == B[:, ~num], axis=1)
        return np.where(inside, self.log_norm, -np.inf)

    def sample(self, x, rng):
        gen = as_generator(rng)
        x = np.array(x, dtype=float).ravel()
        num = np.flatnonzero(self._num)
        x[num] = x[num] + self._h * (2.0 * gen.random(num.size) - 1.0)
        return x

    def unit_offsets(self, rng, size):
        gen = as_generator(rng)
        xi = np.zeros((size, self.d))
        xi[:, self._num] = 2.0 * gen.random((size, int(self._num.sum()))) - 1.0
        return xi

    def with_bandwidth(self, h):
        return ProductBoxKernel(tuple(float(h) for _ in self.categorical), self.categorical)

    @property
    def scaled_offsets(self) -> np.ndarray:
        """Per-column multiplier applied to ``unit_offsets``."""
        s = np.zeros(self.d)
        s[self._num] = self._h
        return s

    @property
    def spec(self):
        hs = sorted({float(h) for h, c in zip(self.bandwidths, self.categorical) if not c})
        return f"productbox:h={hs[0]!r}" if len(hs) == 1 else "productbox:h=" + "/".join(map(repr, hs))


@dataclass(frozen=True)
class FlatKernel(Kernel):
    """Uniform density on the box ``[lo, hi]^d``, whatever the first argument."""

    lo: float
    hi: float
    d: int = 1
    kind = "flat"
    symmetric = False

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ContractViolation("flat kernel needs a bounded support")
        if not self.hi > self.lo:
            raise ContractViolation("flat kernel needs hi > lo")

    @property
    def log_norm(self) -> float:
        return -self.d * math.log(self.hi - self.lo)

    def log_pairwise(self, A, B):
        A = as_matrix(A, self.d)
        B = as_matrix(B, self.d)
        inside = np.all((B >= self.lo) & (B <= self.hi), axis=1)
        return np.broadcast_to(np.where(inside, self.log_norm, -np.inf)[None, :], (A.shape[0], B.shape[0])).copy()

    def log_paired(self, A, B):
        B = as_matrix(B, self.d)
        inside = np.all((B >= self.lo) & (B <= self.hi), axis=1)
        return np.where(inside, self.log_norm, -np.inf)

    def sample(self, x, rng):
        gen = as_generator(rng)
        return self.lo + (self.hi - self.lo) * gen.random(self.d)

    def with_bandwidth(self, h):
        raise ContractViolation("flat kernel has no bandwidth")

    @property
    def spec(self):
        return f"flat:lo={self.lo!r},hi={self.hi!r}"


def weights_from_logs(logs: np.ndarray) -> np.ndarray:
    """Normalize log kernel values along the last axis (max-subtracted)."""
    logs = np.asarray(logs, dtype=float)
    top = np.max(logs, axis=-1, keepdims=True)
    if np.any(top == -np.inf):
        raise AnchorIsolated("all kernel values are zero at the anchor")
    w = np.exp(logs - top)
    return w / w.sum(axis=-1, keepdims=True)


def weights_at(kernel: Kernel, centers, anchor) -> np.ndarray:
    """``w_i = H(centers_i, anchor) / sum_j H(centers_j, anchor)``."""
    return weights_from_logs(kernel.log_at(centers, anchor))


def parse_kernel(text: str, d: int = 1, categorical=None) -> Kernel:
    """Parse ``gaussian:h=0.4``, ``box:h=1.5``, ``productbox:h=0.05``, ``flat:lo=-3,hi=3``."""
    kind, _, rest = text.strip().partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ContractViolation(f"malformed kernel parameter {item!r}")
        params[key.strip()] = float(val)
    kind = kind.strip().lower()
    try:
        if kind == "gaussian":
            return GaussianKernel(params["h"], d)
        if kind == "box":
            return BoxKernel(params["h"], d)
        if kind == "flat":
            return FlatKernel(params["lo"], params["hi"], d)
        if kind == "productbox":
            cat = tuple(categorical) if categorical is not None else (False,) * d
            return ProductBoxKernel(tuple(params["h"] for _ in cat), cat)
    except KeyError as err:
        raise ContractViolation(f"kernel {kind!r} is missing parameter {err}") from None
    raise ContractViolation(f"unknown kernel kind {kind!r}")
