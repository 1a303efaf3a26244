"""Independent reference computations used as test oracles.

Nothing here calls into regime_vi numerics; everything goes through the
joint-Gaussian (covariance) form with numpy/scipy solvers.
"""

import numpy as np
from scipy.stats import multivariate_normal


def conjugate_posterior(x, y, h, k=0):
    """Exact posterior of (mu, beta) for a single cluster by conditioning
    the joint Gaussian of parameters and observations."""
    T, n = x.shape
    M, R0, Q0 = h.M, h.R0[k], h.Q0[k]
    mu0, beta0 = h.mu0[k], h.beta0[k]

    # vec(X) row-major: cov = I_T (x) M + 1 1' (x) R0, cross-cov with mu = [R0 R0 ... R0]
    Sxx = np.kron(np.eye(T), M) + np.kron(np.ones((T, T)), R0)
    C = np.tile(R0, (1, T))
    resid = (x - mu0).reshape(-1)
    G = np.linalg.solve(Sxx, C.T).T
    mu_hat = mu0 + G @ resid
    R_hat = R0 - G @ C.T

    Syy = h.sigma**2 * np.eye(T) + x @ Q0 @ x.T
    Cb = Q0 @ x.T
    Gb = np.linalg.solve(Syy, Cb.T).T
    beta_hat = beta0 + Gb @ (y - x @ beta0)
    Q_hat = Q0 - Gb @ Cb.T
    return mu_hat, R_hat, beta_hat, Q_hat


def conjugate_log_evidence(x, y, h, k=0):
    """log p(x) + log p(y | x) for a single cluster (K = 1)."""
    T, n = x.shape
    Sxx = np.kron(np.eye(T), h.M) + np.kron(np.ones((T, T)), h.R0[k])
    lx = multivariate_normal(mean=np.tile(h.mu0[k], T), cov=Sxx).logpdf(x.reshape(-1))
    Syy = h.sigma**2 * np.eye(T) + x @ h.Q0[k] @ x.T
    ly = multivariate_normal(mean=x @ h.beta0[k], cov=Syy).logpdf(y)
    return float(lx + ly)


def raw_predictive_density(y, x, post, h, weights):
    """Predictive density assembled term by term from the rank-one
    precision update: explicit Delta_k, psi_ky and the full exponent."""
    s2 = h.sigma**2
    total = 0.0
    for k in range(post.K):
        Qh = post.Q_hat[k]
        Qinv = np.linalg.inv(Qh)
        Delta = np.linalg.inv(np.outer(x, x) / s2 + Qinv)
        psi = y * x / s2 + Qinv @ post.beta_hat[k]
        expo = -(y**2) / (2 * s2) - 0.5 * post.beta_hat[k] @ Qinv @ post.beta_hat[k] + 0.5 * psi @ Delta @ psi
        ratio = np.exp(np.linalg.slogdet(Delta)[1] - np.linalg.slogdet(Qh)[1])
        total += weights[k] * np.sqrt(ratio) * np.exp(expo)
    return total / (h.sigma * np.sqrt(2 * np.pi))


def determinant_ratio(x, Q_hat, sigma):
    """|Delta| / |Q_hat| from explicit determinants."""
    Delta = np.linalg.inv(np.outer(x, x) / sigma**2 + np.linalg.inv(Q_hat))
    return np.linalg.det(Delta) / np.linalg.det(Q_hat)
