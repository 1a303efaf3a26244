"""Variational inference for clusterwise linear regression."""

from .cavi import FitOptions, compute_elbo, fit, init_posterior, run_cavi
from .errors import (
    CholeskyError,
    ConfigError,
    DataError,
    FitError,
    RegimeVIError,
    ValidationError,
)
from .model import (
    Dataset,
    FitReport,
    Hyperparameters,
    PredictiveMixture,
    VariationalPosterior,
    log_sum_exp,
    spd_inverse,
    validate_dataset,
    validate_hyperparameters,
)
from .predictor import predict, predictive_cluster_probs, predictive_mixture

__version__ = "0.1.0"
