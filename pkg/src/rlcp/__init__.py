"""Localized conformal prediction: split, weighted, baseLCP, calLCP, RLCP and m-RLCP."""

from .core import (
    AbsoluteResidualScore,
    AnchorIsolated,
    ContractViolation,
    Dataset,
    PredictionSet,
    RngStream,
    score,
    set_contains,
)
from .kernels import BoxKernel, FlatKernel, GaussianKernel, ProductBoxKernel, parse_kernel, weights_at
from .methods import (
    BatchResult,
    Conformalizer,
    MethodConfig,
    RlcpOutput,
    base_lcp,
    cal_lcp,
    m_rlcp,
    parse_method,
    rlcp,
    split_cp,
    weighted_cp,
)
from .wdist import WeightedScoreDistribution, pvalue_deterministic, pvalue_smoothed, quantile

__version__ = "0.1.0"
