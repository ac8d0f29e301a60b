"""Multinomial outcomes under sample selection: local logistic representation,
closed-form identification and a two-step estimator."""

__version__ = "0.1.0"

from .bilogistic import (
    amh_joint,
    amh_partials,
    attainable_interval,
    logistic_cdf,
    logistic_quantile,
)
from .llr import association_from_counts, solve_association
from .identify import (
    LatentCategorical,
    ObservedSelectionTable,
    forward_map,
    identify_all,
    overidentification_check,
)
from .estimate import Dataset, EstimatorConfig, FitResult, ModelParams, estimate_two_step
from .dgp import DGPConfig, canonical_config, monte_carlo, sample_dataset

__all__ = [
    "amh_joint", "amh_partials", "attainable_interval", "logistic_cdf", "logistic_quantile",
    "association_from_counts", "solve_association",
    "LatentCategorical", "ObservedSelectionTable", "forward_map", "identify_all",
    "overidentification_check",
    "Dataset", "EstimatorConfig", "FitResult", "ModelParams", "estimate_two_step",
    "DGPConfig", "canonical_config", "monte_carlo", "sample_dataset",
]
