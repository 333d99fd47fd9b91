import math

import numpy as np
import pytest
from scipy import stats

from rlcp.core import AnchorIsolated, ContractViolation
from rlcp.kernels import (
    BoxKernel,
    FlatKernel,
    GaussianKernel,
    ProductBoxKernel,
    parse_kernel,
    weights_at,
)


def test_gaussian_peak():
    assert GaussianKernel(1.0).eval([0.0], [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)


def test_box_value_and_support():
    k = BoxKernel(2.0)
    assert k.eval([0.0], [1.0]) == pytest.approx(0.25, rel=1e-12)
    assert k.eval([0.0], [2.5]) == 0.0


def test_nonpositive_bandwidth():
    for bad in (0.0, -1.0):
        with pytest.raises(ContractViolation):
            GaussianKernel(bad)
        with pytest.raises(ContractViolation):
            BoxKernel(bad)


def test_flat_needs_bounded_support():
    with pytest.raises(ContractViolation):
        FlatKernel(-np.inf, 1.0)


def test_box_samples_in_ball():
    k = BoxKernel(0.5, 3)
    rng = np.random.default_rng(0)
    draws = np.stack([k.sample(np.zeros(3), rng) for _ in range(2000)])
    assert np.all(np.linalg.norm(draws, axis=1) <= 0.5)


def test_gaussian_sample_mean():
    k = GaussianKernel(1.0)
    xi = k.unit_offsets(np.random.default_rng(1), 100_000)
    assert abs(xi.mean()) < 0.01


def test_productbox_copies_category():
    k = ProductBoxKernel((0.1, 0.05, 0.05), (True, False, False))
    rng = np.random.default_rng(2)
    for code in (0.0, 1.0, 2.0):
        x = np.array([code, 0.5, 0.4])
        for _ in range(50):
            z = k.sample(x, rng)
            assert z[0] == code
            assert np.all(np.abs(z[1:] - x[1:]) <= 0.05)


def test_productbox_density():
    k = ProductBoxKernel((1.0, 0.5, 0.25), (True, False, False))
    assert k.eval([1, 0, 0], [1, 0.4, 0.2]) == pytest.approx(1 / (1.0 * 0.5))
    assert k.eval([1, 0, 0], [2, 0.4, 0.2]) == 0.0


@pytest.mark.parametrize("d", [1, 5])
@pytest.mark.parametrize("name", ["gaussian", "box", "productbox"])
def test_normalization_monte_carlo(name, d):
    # importance sampling with a wide Gaussian proposal around the anchor
    rng = np.random.default_rng(3)
    k = parse_kernel(f"{name}:h=0.7", d)
    x = rng.normal(size=d)
    sigma = 1.0
    N = 200_000
    Z = x + sigma * rng.standard_normal((N, d))
    log_q = -0.5 * d * math.log(2 * math.pi * sigma**2) - ((Z - x) ** 2).sum(1) / (2 * sigma**2)
    ratio = np.exp(k.log_pairwise(x[None], Z)[0] - log_q)
    est, se = ratio.mean(), ratio.std() / math.sqrt(N)
    assert abs(est - 1.0) <= 3 * se + 1e-12


def test_flat_normalization():
    k = FlatKernel(-3.0, 3.0, 2)
    rng = np.random.default_rng(4)
    Z = rng.uniform(-3, 3, size=(1000, 2))
    assert np.allclose(np.exp(k.log_pairwise(np.zeros((1, 2)), Z)) * 36.0, 1.0)


@pytest.mark.parametrize("name", ["gaussian", "box"])
def test_sampler_matches_density(name):
    k = parse_kernel(f"{name}:h=0.8", 1)
    rng = np.random.default_rng(5)
    N = 100_000
    draws = np.array([k.sample([0.3], rng)[0] for _ in range(N)])
    edges = np.linspace(0.3 - 2.4, 0.3 + 2.4, 25)
    grid = np.linspace(edges[0], edges[-1], 24_001)
    dens = np.exp(k.log_pairwise(np.array([[0.3]]), grid[:, None])[0])
    cell = np.searchsorted(edges, grid, side="right") - 1
    valid = (cell >= 0) & (cell < 24)
    probs = np.bincount(cell[valid], weights=dens[valid], minlength=24) * (grid[1] - grid[0])
    probs = probs / probs.sum()
    obs, _ = np.histogram(draws, edges)
    keep = probs * N > 5
    exp = probs[keep] * obs[keep].sum() / probs[keep].sum()
    assert stats.chisquare(obs[keep], exp).pvalue > 0.01


def test_weights_flat_uniform():
    w = weights_at(FlatKernel(-5, 5), np.array([[0.0], [1.0], [2.0], [-4.0]]), [0.5])
    assert w.tolist() == [0.25] * 4


def test_weights_box_zero_outside():
    w = weights_at(BoxKernel(1.0), np.array([[0.0], [0.5], [5.0], [0.9]]), [0.0])
    assert w[2] == 0.0 and w.sum() == pytest.approx(1.0, abs=1e-12)


def test_weights_gaussian_pair():
    w = weights_at(GaussianKernel(1.0), np.array([[0.0], [1.0]]), [0.0])
    e = math.exp(-0.5)
    assert w == pytest.approx([1 / (1 + e), e / (1 + e)], abs=1e-12)


def test_weights_isolated():
    with pytest.raises(AnchorIsolated):
        weights_at(BoxKernel(0.1), np.array([[0.0], [1.0]]), [5.0])


def test_weights_underflow_safe():
    w = weights_at(GaussianKernel(0.01), np.array([[0.0], [10.0], [10.001]]), [10.0])
    assert np.isfinite(w).all() and w[0] == 0.0 and w.sum() == pytest.approx(1.0)


def test_gaussian_symmetric():
    rng = np.random.default_rng(6)
    k = GaussianKernel(0.4, 3)
    a, b = rng.normal(size=(2, 3))
    assert k.eval(a, b) == k.eval(b, a)


def test_log_paired_matches_pairwise():
    rng = np.random.default_rng(7)
    A, B = rng.normal(size=(2, 20, 2))
    for k in (GaussianKernel(0.5, 2), BoxKernel(1.0, 2), FlatKernel(-2, 2, 2),
              ProductBoxKernel((0.5, 0.7), (False, False))):
        full = np.diag(k.log_pairwise(A, B))
        assert np.array_equal(k.log_paired(A, B), full)


def test_parse_kernel():
    assert parse_kernel("gaussian:h=0.4") == GaussianKernel(0.4, 1)
    assert parse_kernel("flat:lo=-3,hi=3", 2) == FlatKernel(-3.0, 3.0, 2)
    assert parse_kernel("box:h=1.5").spec == "box:h=1.5"
    with pytest.raises(ContractViolation):
        parse_kernel("cosine:h=1")
    with pytest.raises(ContractViolation):
        parse_kernel("box:width=1")
