"""Distributed Bayesian clustering with an overfitted mixture of Gaussian
mixtures: embarrassingly parallel local MCMC, statistics-only global
cluster refinement, loss-based clustering estimation and conditional
parameter sampling."""

from .errors import (
    ConfigError,
    DibcError,
    FileFormatError,
    NumericalError,
    ParameterError,
    PipelineError,
    TransportError,
)
from .estimator import DibcClustering
from .local import LocalChainConfig, LocalTrace, gibbs_sweep, run_local_chain
from .metrics import MetricsReport, compute_metrics, optimal_label_map
from .model import (
    AllocationState,
    Hyperparams,
    ModelParams,
    Shard,
    elicit_priors,
    mixture_logdensity,
)
from .params import PosteriorDraws, classify, posterior_predictive_sample
from .runtime import PipelineConfig, PipelineResult, partition_data, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AllocationState",
    "ConfigError",
    "DibcClustering",
    "DibcError",
    "FileFormatError",
    "Hyperparams",
    "LocalChainConfig",
    "LocalTrace",
    "MetricsReport",
    "ModelParams",
    "NumericalError",
    "ParameterError",
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "PosteriorDraws",
    "Shard",
    "TransportError",
    "classify",
    "compute_metrics",
    "elicit_priors",
    "gibbs_sweep",
    "mixture_logdensity",
    "optimal_label_map",
    "partition_data",
    "posterior_predictive_sample",
    "run_local_chain",
    "run_pipeline",
]
