"""Bayesian inference with disparity-based (D-) posteriors.

The log-likelihood in Bayes' rule is replaced by ``-n D(g_n, f_theta)``,
where ``D`` is a disparity such as Hellinger distance and ``g_n`` a kernel
density estimate.  The resulting posterior is sampled by random-walk
Metropolis.
"""

from importlib import metadata as _metadata

from .disparity import (
    DisparityKind,
    GFunction,
    GaussHermiteDisparity,
    MonteCarloDisparity,
    QuadratureDisparity,
    disparity_exact_quadrature,
    disparity_gh,
    disparity_mc,
)
from .errors import (
    BandwidthFallbackWarning,
    DegenerateConditioning,
    DegenerateData,
    DisparityBayesError,
    EmptyChain,
    InitInvalid,
    InsufficientData,
    InvalidLevel,
    InvalidParam,
    NoConvergence,
    NonConvergence,
    StuckChainWarning,
)
from .inference import (
    ContaminatedDensity,
    NormalDensity,
    ZeroDensity,
    breakdown_limit_check,
    disparity_information,
    edap_mde_gap,
    influence_alpha,
    mde,
    t_functional,
)
from .kde import ConditionalKernelDensity, KernelDensity, bandwidth_silverman, select_bandwidth, sheather_jones
from .models import (
    BinomialLogitNormalPosterior,
    DPosterior,
    ExpGamma,
    HierarchicalSpec,
    IndependentPrior,
    LikelihoodPosterior,
    LinearRegression,
    Normal,
    NormalMean,
    NormalPrior,
    RandomEffectsPosterior,
    RandomInterceptPosterior,
    build_iid_dposterior,
    load_parasite,
    load_survey,
)
from .sampler import Chain, ChainConfig, PosteriorSummary, run_metropolis, summarize

__all__ = [
    "BandwidthFallbackWarning",
    "BinomialLogitNormalPosterior",
    "Chain",
    "ChainConfig",
    "ConditionalKernelDensity",
    "ContaminatedDensity",
    "DPosterior",
    "DegenerateConditioning",
    "DegenerateData",
    "DisparityBayesError",
    "DisparityKind",
    "EmptyChain",
    "ExpGamma",
    "GFunction",
    "GaussHermiteDisparity",
    "HierarchicalSpec",
    "IndependentPrior",
    "InitInvalid",
    "InsufficientData",
    "InvalidLevel",
    "InvalidParam",
    "KernelDensity",
    "LikelihoodPosterior",
    "LinearRegression",
    "MonteCarloDisparity",
    "NoConvergence",
    "NonConvergence",
    "Normal",
    "NormalDensity",
    "NormalMean",
    "NormalPrior",
    "PosteriorSummary",
    "QuadratureDisparity",
    "RandomEffectsPosterior",
    "RandomInterceptPosterior",
    "StuckChainWarning",
    "ZeroDensity",
    "bandwidth_silverman",
    "breakdown_limit_check",
    "build_iid_dposterior",
    "disparity_exact_quadrature",
    "disparity_gh",
    "disparity_information",
    "disparity_mc",
    "edap_mde_gap",
    "influence_alpha",
    "load_parasite",
    "load_survey",
    "mde",
    "run_metropolis",
    "select_bandwidth",
    "sheather_jones",
    "summarize",
    "t_functional",
]

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # pragma: no cover - source checkout
    __version__ = "0.1.0"
