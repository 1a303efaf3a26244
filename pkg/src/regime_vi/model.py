"""Domain types and the dense linear-algebra primitives used throughout.

All matrices are dense float64.  Dimensions are small (n is at most a few
dozen), so everything is done with plain LAPACK calls on n x n arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import CholeskyError, ValidationError

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
INTERCEPT_VARIANCE = 1e-6


def symmetrize(a):
    a = np.asarray(a, dtype=np.float64)
    return 0.5 * (a + a.T)


def _potrf(a):
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    return c, info


def cholesky(a, jitter=True):
    """Lower Cholesky factor of the symmetrized ``a``.

    On failure a diagonal jitter of ``eps * mean(diag(a))`` is added for each
    ``eps`` in ``JITTER_LADDER``.  Raises ``CholeskyError`` with the 1-based
    failing pivot if every attempt fails.
    """
    a = symmetrize(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise CholeskyError("matrix has non-finite entries", pivot=0)
    c, info = _potrf(a)
    if info == 0:
        return c
    first_pivot = info
    if jitter:
        scale = float(np.mean(np.abs(np.diag(a)))) or 1.0
        eye = np.eye(a.shape[0])
        for eps in JITTER_LADDER:
            c, info = _potrf(a + eps * scale * eye)
            if info == 0:
                return c
    raise CholeskyError(
        f"matrix is not positive definite (Cholesky failed at pivot {first_pivot})",
        pivot=int(first_pivot),
    )


def spd_inverse(a):
    """Inverse of a symmetric positive-definite matrix via its Cholesky factor."""
    c = cholesky(a)
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise CholeskyError("dpotri failed", pivot=int(info))
    inv = np.tril(inv) + np.tril(inv, -1).T
    return symmetrize(inv)


def logdet_spd(a):
    c = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def log_sum_exp(v, axis=None):
    """Numerically stable ``log(sum(exp(v)))``.

    Returns ``-inf`` when every entry is ``-inf``.  With ``axis`` set the
    reduction is vectorised along that axis.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Fixed model constants.

    ``mu0``/``beta0`` are ``(K, n)`` and ``R0``/``Q0`` are ``(K, n, n)``:
    one prior per cluster.  ``sigma`` is the output noise standard deviation.
    """

    K: int
    n: int
    pi: np.ndarray
    sigma: float
    M: np.ndarray
    mu0: np.ndarray
    R0: np.ndarray
    beta0: np.ndarray
    Q0: np.ndarray
    intercept_index: Optional[int] = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "pi", np.asarray(self.pi, dtype=np.float64))
        set_(self, "M", np.asarray(self.M, dtype=np.float64))
        for name in ("mu0", "beta0"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim == 1:
                v = np.tile(v, (self.K, 1))
            set_(self, name, v)
        for name in ("R0", "Q0"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim == 2:
                v = np.tile(v, (self.K, 1, 1))
            set_(self, name, v)
        set_(self, "sigma", float(self.sigma))

    @classmethod
    def default(cls, K, n, intercept_index=None, sigma=1.0, pi=None):
        """Unit-scale priors, with near-zero variance in the intercept slot."""
        var = np.ones(n)
        mu0 = np.zeros(n)
        if intercept_index is not None:
            var[intercept_index] = INTERCEPT_VARIANCE
            mu0[intercept_index] = 1.0
        if pi is None:
            pi = np.full(K, 1.0 / K)
        return cls(
            K=K,
            n=n,
            pi=pi,
            sigma=sigma,
            M=np.diag(var),
            mu0=mu0,
            R0=np.diag(var),
            beta0=np.zeros(n),
            Q0=np.eye(n),
            intercept_index=intercept_index,
        )

    def permuted(self, perm: Sequence[int]) -> "Hyperparameters":
        """Copy with cluster ``k`` taking the priors of cluster ``perm[k]``."""
        perm = list(perm)
        return replace(
            self,
            pi=self.pi[perm],
            mu0=self.mu0[perm],
            R0=self.R0[perm],
            beta0=self.beta0[perm],
            Q0=self.Q0[perm],
        )

    # Cached inverses and log-determinants; safe because instances are immutable.
    @cached_property
    def M_inv(self):
        return spd_inverse(self.M)

    @cached_property
    def R0_inv(self):
        return np.stack([spd_inverse(r) for r in self.R0])

    @cached_property
    def Q0_inv(self):
        return np.stack([spd_inverse(q) for q in self.Q0])

    @cached_property
    def logdet_M(self):
        return logdet_spd(self.M)

    @cached_property
    def logdet_R0(self):
        return np.array([logdet_spd(r) for r in self.R0])

    @cached_property
    def logdet_Q0(self):
        return np.array([logdet_spd(q) for q in self.Q0])


def _check_spd(a, name):
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} not SPD (non-finite entries)", field=name)
    _, info = _potrf(symmetrize(a))
    if info != 0:
        raise ValidationError(f"{name} not SPD (Cholesky failed at pivot {info})", field=name)


def validate_hyperparameters(h: Hyperparameters) -> Hyperparameters:
    """Check every invariant of ``h``; return it with symmetrized matrices."""
    if not isinstance(h.K, (int, np.integer)) or h.K < 1:
        raise ValidationError("K must be a positive integer", field="K")
    if not isinstance(h.n, (int, np.integer)) or h.n < 1:
        raise ValidationError("n must be a positive integer", field="n")
    K, n = int(h.K), int(h.n)

    if h.pi.shape != (K,):
        raise ValidationError(f"pi has shape {h.pi.shape}, expected ({K},)", field="pi")
    if not np.all(np.isfinite(h.pi)) or np.any(h.pi <= 0) or abs(h.pi.sum() - 1.0) > 1e-12:
        raise ValidationError("pi not a simplex", field="pi")
    if not np.isfinite(h.sigma) or h.sigma <= 0:
        raise ValidationError("sigma must be positive", field="sigma")

    shapes = {
        "M": (h.M, (n, n)),
        "mu0": (h.mu0, (K, n)),
        "R0": (h.R0, (K, n, n)),
        "beta0": (h.beta0, (K, n)),
        "Q0": (h.Q0, (K, n, n)),
    }
    for name, (arr, shape) in shapes.items():
        if arr.shape != shape:
            raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}", field=name)
    for name in ("mu0", "beta0"):
        if not np.all(np.isfinite(shapes[name][0])):
            raise ValidationError(f"{name} has non-finite entries", field=name)

    if h.intercept_index is not None and not 0 <= h.intercept_index < n:
        raise ValidationError("intercept_index out of range", field="intercept_index")

    M = symmetrize(h.M)
    _check_spd(M, "M")
    R0 = np.stack([symmetrize(r) for r in h.R0])
    Q0 = np.stack([symmetrize(q) for q in h.Q0])
    for k in range(K):
        _check_spd(R0[k], f"R0[{k}]")
        _check_spd(Q0[k], f"Q0[{k}]")

    if (
        np.array_equal(M, h.M)
        and np.array_equal(R0, h.R0)
        and np.array_equal(Q0, h.Q0)
    ):
        return h
    return replace(h, M=M, R0=R0, Q0=Q0)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Row ``t`` of ``x`` is the input that predicts entry ``t`` of ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64).reshape(-1))

    @property
    def T(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.x.shape[1]

    def subset(self, rows):
        return Dataset(self.x[rows], self.y[rows])


def validate_dataset(data: Dataset, h: Optional[Hyperparameters] = None) -> Dataset:
    if data.x.ndim != 2:
        raise ValidationError("x must be a T x n matrix", field="x")
    if data.x.shape[0] != data.y.shape[0]:
        raise ValidationError(
            f"x has {data.x.shape[0]} rows but y has {data.y.shape[0]} entries", field="y"
        )
    if data.T < 1:
        raise ValidationError("dataset is empty", field="x")
    if not np.all(np.isfinite(data.x)):
        raise ValidationError("x has non-finite entries", field="x")
    if not np.all(np.isfinite(data.y)):
        raise ValidationError("y has non-finite entries", field="y")
    if h is not None:
        if data.n != h.n:
            raise ValidationError(f"x has {data.n} columns, expected n={h.n}", field="x")
        if h.intercept_index is not None and not np.all(data.x[:, h.intercept_index] == 1.0):
            raise ValidationError(
                f"column {h.intercept_index} of x must be identically 1", field="x"
            )
    return data


@dataclass(frozen=True, eq=False)
class VariationalPosterior:
    phi: np.ndarray  # (T, K)
    mu_hat: np.ndarray  # (K, n)
    R_hat: np.ndarray  # (K, n, n)
    beta_hat: np.ndarray  # (K, n)
    Q_hat: np.ndarray  # (K, n, n)

    @property
    def K(self):
        return self.mu_hat.shape[0]

    @property
    def n(self):
        return self.mu_hat.shape[1]

    def permuted(self, perm: Sequence[int]) -> "VariationalPosterior":
        perm = list(perm)
        return VariationalPosterior(
            phi=self.phi[:, perm],
            mu_hat=self.mu_hat[perm],
            R_hat=self.R_hat[perm],
            beta_hat=self.beta_hat[perm],
            Q_hat=self.Q_hat[perm],
        )


@dataclass(frozen=True, eq=False)
class FitReport:
    posterior: VariationalPosterior
    elbo_trace: list
    converged: bool
    sweeps: int
    restart_index: int
    seed: int
    restart_elbos: list = field(default_factory=list)

    @property
    def elbo(self):
        return self.elbo_trace[-1]


@dataclass(frozen=True, eq=False)
class PredictiveMixture:
    """Gaussian mixture over the next output: one component per cluster."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def K(self):
        return self.weights.shape[0]
