"""Coordinate ascent variational inference for the clusterwise regression model.

One sweep updates, in order, the responsibilities ``phi``, the cluster-mean
factors ``(R_hat, mu_hat)`` and the regression factors ``(Q_hat, beta_hat)``.
Each step is the exact coordinate maximiser of the ELBO, so the ELBO trace of
a fit is non-decreasing up to rounding.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import CholeskyError, FitError, ValidationError
from .model import (
    Dataset,
    FitReport,
    Hyperparameters,
    VariationalPosterior,
    log_sum_exp,
    logdet_spd,
    spd_inverse,
)

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
THREADS_ENV = "REGIME_VI_THREADS"


@dataclass(frozen=True)
class FitOptions:
    max_sweeps: int = 500
    rel_tol: float = 1e-8
    restarts: int = 8
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValidationError("max_sweeps must be >= 1", field="max_sweeps")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1", field="restarts")
        if not self.rel_tol > 0:
            raise ValidationError("rel_tol must be positive", field="rel_tol")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative", field="seed")


def worker_count(requested=1):
    """``requested`` capped by the REGIME_VI_THREADS environment variable."""
    cap = os.environ.get(THREADS_ENV)
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def _d2_seeding(x, K, rng):
    """k-means++ style D^2 sampling of K row indices of ``x``."""
    T = x.shape[0]
    chosen = [int(rng.integers(T))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(T, p=d2 / total))
        else:
            # all remaining rows coincide with a chosen one
            rest = np.setdiff1d(np.arange(T), chosen)
            idx = int(rest[rng.integers(rest.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return chosen


def init_posterior(data: Dataset, h: Hyperparameters, seed: int) -> VariationalPosterior:
    """Random starting point: Dirichlet(1) responsibilities, D^2-seeded means,
    and the priors for every covariance and regression factor."""
    if data.T < h.K:
        raise ValidationError("fewer observations than clusters", field="x")
    rng = _rng(seed)
    phi = rng.dirichlet(np.ones(h.K), size=data.T) if h.K > 1 else np.ones((data.T, 1))
    rows = _d2_seeding(data.x, h.K, rng)
    return VariationalPosterior(
        phi=phi,
        mu_hat=data.x[rows].copy(),
        R_hat=h.R0.copy(),
        beta_hat=h.beta0.copy(),
        Q_hat=h.Q0.copy(),
    )


def _cluster_log_scores(x, post, h):
    """log pi_k + E[log p(x_t | mu_k)] up to terms constant in k. Shape (T, K)."""
    Minv = h.M_inv
    xm = x @ Minv @ post.mu_hat.T
    quad = np.einsum("ki,ij,kj->k", post.mu_hat, Minv, post.mu_hat)
    tr = np.einsum("ij,kji->k", Minv, post.R_hat)
    return np.log(h.pi) + xm - 0.5 * (quad + tr)


def update_responsibilities(post: VariationalPosterior, data: Dataset, h: Hyperparameters):
    x, y = data.x, data.y
    s2 = h.sigma**2
    xb = x @ post.beta_hat.T
    xQx = np.einsum("ti,kij,tj->tk", x, post.Q_hat, x)
    log_r = _cluster_log_scores(x, post, h) + (y[:, None] * xb - 0.5 * (xb**2 + xQx)) / s2
    if not np.all(np.isfinite(log_r)):
        raise FitError("non-finite responsibility scores")
    phi = np.exp(log_r - log_sum_exp(log_r, axis=1)[:, None])
    # renormalise away the last ulp of drift
    return phi / phi.sum(axis=1, keepdims=True)


def update_cluster_moments(phi, data: Dataset, h: Hyperparameters):
    """Returns ``(R_hat, mu_hat)`` with shapes (K, n, n) and (K, n)."""
    Nk = phi.sum(axis=0)
    Sx = phi.T @ data.x
    R_hat = np.empty_like(h.R0)
    mu_hat = np.empty_like(h.mu0)
    for k in range(h.K):
        if Nk[k] == 0.0:
            R_hat[k], mu_hat[k] = h.R0[k], h.mu0[k]
            continue
        R_hat[k] = spd_inverse(h.R0_inv[k] + h.M_inv * Nk[k])
        mu_hat[k] = R_hat[k] @ (h.R0_inv[k] @ h.mu0[k] + h.M_inv @ Sx[k])
    return R_hat, mu_hat


def update_regression_moments(phi, data: Dataset, h: Hyperparameters):
    """Returns ``(Q_hat, beta_hat)`` with shapes (K, n, n) and (K, n)."""
    x, y = data.x, data.y
    s2 = h.sigma**2
    Nk = phi.sum(axis=0)
    Sxx = np.einsum("tk,ti,tj->kij", phi, x, x)
    Sxy = phi.T @ (y[:, None] * x)
    Q_hat = np.empty_like(h.Q0)
    beta_hat = np.empty_like(h.beta0)
    for k in range(h.K):
        if Nk[k] == 0.0:
            Q_hat[k], beta_hat[k] = h.Q0[k], h.beta0[k]
            continue
        Q_hat[k] = spd_inverse(h.Q0_inv[k] + Sxx[k] / s2)
        beta_hat[k] = Q_hat[k] @ (h.Q0_inv[k] @ h.beta0[k] + Sxy[k] / s2)
    return Q_hat, beta_hat


def _gaussian_prior_term(mean, cov, prior_mean, prior_inv, prior_logdet):
    """E_q[log N(theta; prior)] + entropy of q = N(mean, cov)."""
    n = mean.shape[0]
    d = mean - prior_mean
    return 0.5 * (
        logdet_spd(cov)
        - prior_logdet
        - np.sum(prior_inv * cov)
        - d @ prior_inv @ d
        + n
    )


def compute_elbo(post: VariationalPosterior, data: Dataset, h: Hyperparameters) -> float:
    """Evidence lower bound with every additive constant included."""
    # overflow surfaces as a non-finite total, reported below as FitError
    with np.errstate(over="ignore", invalid="ignore"):
        return _elbo(post, data, h)


def _elbo(post, data, h):
    x, y, phi = data.x, data.y, post.phi
    n, s2 = h.n, h.sigma**2
    elbo = 0.0
    for k in range(h.K):
        elbo += _gaussian_prior_term(
            post.mu_hat[k], post.R_hat[k], h.mu0[k], h.R0_inv[k], h.logdet_R0[k]
        )
        elbo += _gaussian_prior_term(
            post.beta_hat[k], post.Q_hat[k], h.beta0[k], h.Q0_inv[k], h.logdet_Q0[k]
        )
    if data.T:
        Minv = h.M_inv
        # E[log p(x_t | mu_k)] for every (t, k)
        d = x[:, None, :] - post.mu_hat[None, :, :]
        quad = np.einsum("tki,ij,tkj->tk", d, Minv, d)
        tr = np.einsum("ij,kji->k", Minv, post.R_hat)
        ll_x = -0.5 * (n * LOG_2PI + h.logdet_M + quad + tr)
        # E[log p(y_t | x_t, beta_k)]
        resid = y[:, None] - x @ post.beta_hat.T
        xQx = np.einsum("ti,kij,tj->tk", x, post.Q_hat, x)
        ll_y = -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * (resid**2 + xQx) / s2
        elbo += float(np.sum(phi * (np.log(h.pi) + ll_x + ll_y)))
        elbo -= float(np.sum(xlogy(phi, phi)))
    if not np.isfinite(elbo):
        raise FitError("ELBO is not finite")
    return float(elbo)


def sweep(post: VariationalPosterior, data: Dataset, h: Hyperparameters) -> VariationalPosterior:
    """One CAVI pass in the fixed order phi -> (R, mu) -> (Q, beta)."""
    phi = update_responsibilities(post, data, h)
    R_hat, mu_hat = update_cluster_moments(phi, data, h)
    Q_hat, beta_hat = update_regression_moments(phi, data, h)
    return VariationalPosterior(phi=phi, mu_hat=mu_hat, R_hat=R_hat, beta_hat=beta_hat, Q_hat=Q_hat)


def run_cavi(post, data, h, max_sweeps=500, rel_tol=1e-8):
    """Sweep from ``post`` until the relative ELBO change drops below ``rel_tol``.

    Returns ``(posterior, elbo_trace, converged)``.
    """
    trace = []
    converged = False
    for _ in range(max_sweeps):
        post = sweep(post, data, h)
        elbo = compute_elbo(post, data, h)
        if trace:
            prev = trace[-1]
            if elbo < prev - 1e-8 * (1.0 + abs(prev)):
                log.warning("ELBO decreased from %.17g to %.17g", prev, elbo)
            if abs(elbo - prev) / (1.0 + abs(elbo)) < rel_tol:
                trace.append(elbo)
                converged = True
                break
        trace.append(elbo)
    return post, trace, converged


def _one_restart(data, h, opts, r):
    seed = opts.seed + r
    post = init_posterior(data, h, seed)
    post, trace, converged = run_cavi(post, data, h, opts.max_sweeps, opts.rel_tol)
    return FitReport(
        posterior=post,
        elbo_trace=trace,
        converged=converged,
        sweeps=len(trace),
        restart_index=r,
        seed=seed,
    )


def fit(data: Dataset, h: Hyperparameters, opts: FitOptions = FitOptions()) -> FitReport:
    """Multi-restart CAVI; returns the restart with the highest final ELBO.

    Ties go to the lowest restart index, so the result does not depend on
    how restarts are scheduled across threads.
    """

    def attempt(r):
        try:
            return _one_restart(data, h, opts, r)
        except (CholeskyError, FitError, FloatingPointError) as exc:
            log.warning("restart %d failed: %s", r, exc)
            return exc

    workers = worker_count(opts.threads)
    if workers > 1 and opts.restarts > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(attempt, range(opts.restarts)))
    else:
        results = [attempt(r) for r in range(opts.restarts)]

    reports = [res for res in results if isinstance(res, FitReport)]
    if not reports:
        raise FitError(f"all {opts.restarts} restarts failed; last error: {results[-1]}")
    best = reports[0]
    for rep in reports[1:]:
        if rep.elbo > best.elbo:
            best = rep
    restart_elbos = [res.elbo if isinstance(res, FitReport) else float("nan") for res in results]
    return FitReport(
        posterior=best.posterior,
        elbo_trace=best.elbo_trace,
        converged=best.converged,
        sweeps=best.sweeps,
        restart_index=best.restart_index,
        seed=best.seed,
        restart_elbos=restart_elbos,
    )
