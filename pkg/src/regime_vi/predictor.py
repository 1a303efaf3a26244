"""Predictive density of the next output given the current input.

The cluster probabilities use only the input (the output being forecast is
unknown), and each cluster contributes the Gaussian obtained by integrating
the regression vector out of its variational factor:
``N(beta_hat_k' x, sigma^2 + x' Q_hat_k x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ValidationError
from .model import Hyperparameters, PredictiveMixture, VariationalPosterior, log_sum_exp

QUANTILE_BRACKET_SD = 12.0
QUANTILE_TOL = 1e-10


def _as_input(x, n):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != n:
        raise ValidationError(f"x has length {x.shape[0]}, expected {n}", field="x")
    if not np.all(np.isfinite(x)):
        raise ValidationError("x has non-finite entries", field="x")
    return x


def predictive_cluster_probs(x, post: VariationalPosterior, h: Hyperparameters):
    x = _as_input(x, h.n)
    Minv = h.M_inv
    score = (
        np.log(h.pi)
        + post.mu_hat @ (Minv @ x)
        - 0.5 * np.einsum("ki,ij,kj->k", post.mu_hat, Minv, post.mu_hat)
        - 0.5 * np.einsum("ij,kji->k", Minv, post.R_hat)
    )
    w = np.exp(score - log_sum_exp(score))
    return w / w.sum()


def predictive_mixture(x, post: VariationalPosterior, h: Hyperparameters) -> PredictiveMixture:
    """Mixture weights, means and variances for the output following ``x``.

    The determinant ratio |Delta_k| / |Q_hat_k| of the rank-one update equals
    sigma^2 / (sigma^2 + x'Q_hat_k x), which turns each cluster term into an
    exactly normalised Gaussian; Delta_k itself is never formed.
    """
    x = _as_input(x, h.n)
    weights = predictive_cluster_probs(x, post, h)
    means = post.beta_hat @ x
    variances = h.sigma**2 + np.einsum("i,kij,j->k", x, post.Q_hat, x)
    return PredictiveMixture(weights=weights, means=means, variances=variances)


def density_at(mix: PredictiveMixture, y):
    y = np.asarray(y, dtype=np.float64)
    z = (y[..., None] - mix.means) ** 2 / mix.variances
    comp = np.exp(-0.5 * z) / np.sqrt(2.0 * np.pi * mix.variances)
    out = comp @ mix.weights
    return float(out) if out.ndim == 0 else out


def mixture_mean(mix: PredictiveMixture) -> float:
    return float(mix.weights @ mix.means)


def mixture_variance(mix: PredictiveMixture) -> float:
    m = mixture_mean(mix)
    return float(mix.weights @ (mix.variances + mix.means**2) - m * m)


def mixture_cdf(mix: PredictiveMixture, y):
    y = np.asarray(y, dtype=np.float64)
    out = ndtr((y[..., None] - mix.means) / np.sqrt(mix.variances)) @ mix.weights
    return float(out) if out.ndim == 0 else out


def mixture_quantile(mix: PredictiveMixture, p: float) -> float:
    """Inverse CDF by bisection to ``QUANTILE_TOL`` absolute."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"quantile level {p} outside (0, 1)", field="p")
    sd = np.sqrt(mix.variances.max())
    lo = float(mix.means.min() - QUANTILE_BRACKET_SD * sd)
    hi = float(mix.means.max() + QUANTILE_BRACKET_SD * sd)
    while hi - lo > QUANTILE_TOL:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # interval at float resolution
            break
        if mixture_cdf(mix, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class Prediction:
    mixture: PredictiveMixture
    mean: float
    variance: float
    interval: tuple
    alpha: float


def predict(x, post: VariationalPosterior, h: Hyperparameters, alpha: float = 0.05) -> Prediction:
    mix = predictive_mixture(x, post, h)
    interval = (mixture_quantile(mix, alpha / 2), mixture_quantile(mix, 1 - alpha / 2))
    return Prediction(
        mixture=mix,
        mean=mixture_mean(mix),
        variance=mixture_variance(mix),
        interval=interval,
        alpha=alpha,
    )
