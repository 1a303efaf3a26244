"""Exception hierarchy shared across the package."""

import numpy as np


class RegimeVIError(Exception):
    """Base class for all package errors."""


class ValidationError(RegimeVIError, ValueError):
    """Invalid hyperparameters or data. ``field`` names the offending input."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(RegimeVIError, ValueError):
    """Malformed or insufficient input data (CSV files, series overlap)."""


class CholeskyError(RegimeVIError, np.linalg.LinAlgError):
    """Cholesky factorization failed even after jitter."""

    def __init__(self, message, pivot):
        super().__init__(message)
        self.pivot = pivot


class FitError(RegimeVIError):
    """Numerical failure during CAVI (e.g. every restart failed)."""


class ConfigError(RegimeVIError, ValueError):
    """Config schema violation. ``pointer`` is a JSON pointer to the bad value."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
