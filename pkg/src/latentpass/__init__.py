"""Pass hazards with dyadic covariates, spatial effects and per-game latent factors."""

from .core import (CellTable, CovariateRecord, HazardLattice, ModelInputError, ModelNumericError,
                   PassEvent, PositionClass, interval_loglik, linear_predictor, marginal_interval_loglik,
                   sequence_loglik)
from .estimator import LatentPassingModel, loglik_report
from .sampler import ChainConfig, Truth, run_chain, summarize
from .spatial import SpatialField, SpatialFieldEstimator, fit_field
from .synthetic import SyntheticSpec, generate, split_train_test

__version__ = "0.1.0"

__all__ = [
    "CellTable", "ChainConfig", "CovariateRecord", "HazardLattice", "LatentPassingModel",
    "ModelInputError", "ModelNumericError", "PassEvent", "PositionClass", "SpatialField",
    "SpatialFieldEstimator", "SyntheticSpec", "Truth", "fit_field", "generate", "interval_loglik",
    "linear_predictor", "loglik_report", "marginal_interval_loglik", "run_chain", "sequence_loglik", "split_train_test",
    "summarize",
]
