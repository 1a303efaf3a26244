"""Synthetic data from the generative model, plus ground-truth recovery scores.

Random streams
--------------
Every draw comes from numpy's Philox4x32 counter-based bit generator.  The
root ``SeedSequence(seed)`` is spawned into five independent children, one
per latent block, in this fixed order: mu, beta, c, x, y.  Standard normals
use numpy's ziggurat sampler, correlated Gaussians are ``mean + L z`` with
``L`` the lower Cholesky factor of the covariance.  Draws within a block are
consumed row by row, so increasing T only appends to the sample.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import Dataset, Hyperparameters, VariationalPosterior, cholesky

MAX_MATCH_K = 8
STREAMS = ("mu", "beta", "c", "x", "y")


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    dataset: Dataset
    true_mu: np.ndarray  # (K, n)
    true_beta: np.ndarray  # (K, n)
    true_assignments: np.ndarray  # (T,)
    seed: int

    @property
    def K(self):
        return self.true_mu.shape[0]


def streams(seed):
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(STREAMS, children)}


def _mvn(rng, mean, cov):
    L = cholesky(cov)
    return mean + L @ rng.standard_normal(mean.shape[0])


def sample_dataset(h: Hyperparameters, T: int, seed: int) -> SyntheticDataset:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValidationError("T must be a positive integer", field="T")
    rng = streams(seed)
    K, n = h.K, h.n
    mu = np.stack([_mvn(rng["mu"], h.mu0[k], h.R0[k]) for k in range(K)])
    beta = np.stack([_mvn(rng["beta"], h.beta0[k], h.Q0[k]) for k in range(K)])

    u = rng["c"].random(T)
    c = np.minimum(np.searchsorted(np.cumsum(h.pi), u, side="right"), K - 1)

    L = cholesky(h.M)
    z = rng["x"].standard_normal((T, n))
    x = mu[c] + z @ L.T
    if h.intercept_index is not None:
        x[:, h.intercept_index] = 1.0

    noise = rng["y"].standard_normal(T)
    y = np.einsum("ti,ti->t", x, beta[c]) + h.sigma * noise
    return SyntheticDataset(
        dataset=Dataset(x, y),
        true_mu=mu,
        true_beta=beta,
        true_assignments=c.astype(np.int64),
        seed=int(seed),
    )


def match_clusters(truth: SyntheticDataset, post: VariationalPosterior):
    """Permutation ``perm`` with fitted cluster ``perm[k]`` matched to true
    cluster ``k``, minimising total squared distance between the means."""
    K = truth.K
    if post.K != K:
        raise ValidationError(f"posterior has {post.K} clusters, truth has {K}", field="K")
    if K > MAX_MATCH_K:
        raise ValidationError(f"exhaustive matching limited to K <= {MAX_MATCH_K}", field="K")
    cost = np.sum((truth.true_mu[:, None, :] - post.mu_hat[None, :, :]) ** 2, axis=2)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(K)):
        total = cost[np.arange(K), perm].sum()
        if total < best_cost:
            best, best_cost = perm, total
    return best


def recovery_metrics(truth: SyntheticDataset, post: VariationalPosterior, perm):
    aligned = post.permuted(perm)
    max_mu_err = float(np.max(np.abs(aligned.mu_hat - truth.true_mu)))
    max_beta_err = float(np.max(np.abs(aligned.beta_hat - truth.true_beta)))
    # np.argmax returns the first maximum, so ties go to the lowest index
    labels = np.argmax(aligned.phi, axis=1)
    accuracy = float(np.mean(labels == truth.true_assignments))
    return {
        "max_mu_err": max_mu_err,
        "max_beta_err": max_beta_err,
        "assignment_accuracy": accuracy,
    }
