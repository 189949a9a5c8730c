"""Squared-exponential and block compound-symmetry covariance machinery.

The SE kernel here uses the parameterization

    k(vi, vj) = sigma_f2 * exp(-sum_k |v_ki - v_kj|^2 / phi_k)

i.e. the squared distance per covariate is divided by the length scale
directly (no factor of 2, no square on phi).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve as _cho_solve

from .errors import ConfigError, DataError, NumericalError

# Jitter escalation used when a Cholesky factorization fails: each step adds
# eps * mean(diag) to the diagonal.
JITTER_STEPS = (0.0, 1e-10, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KernelParams:
    """SE kernel hyperparameters: signal variance, length scales, noise variance."""

    sigma_f2: float
    phi: np.ndarray
    sigma_02: float

    def __post_init__(self):
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, dtype=float)))
        if not (self.sigma_f2 > 0):
            raise ConfigError(f"sigma_f2 must be positive, got {self.sigma_f2}")
        if self.phi.ndim != 1 or not np.all(self.phi > 0):
            raise ConfigError("phi must be a vector of positive length scales")
        if self.sigma_02 < 0:
            raise ConfigError(f"sigma_02 must be nonnegative, got {self.sigma_02}")

    @property
    def q(self) -> int:
        return self.phi.size


@dataclass(frozen=True)
class CompoundSymmetryBlock:
    """One block of a compound-symmetry covariance: scale * [(1-rho) I + rho J]."""

    n: int
    rho: float
    scale: float

    def dense(self) -> np.ndarray:
        return self.scale * ((1.0 - self.rho) * np.eye(self.n) + self.rho * np.ones((self.n, self.n)))


def se_kernel(vi: np.ndarray, vj: np.ndarray, params: KernelParams) -> float:
    """Evaluate the SE kernel between two covariate vectors."""
    vi = np.atleast_1d(np.asarray(vi, dtype=float))
    vj = np.atleast_1d(np.asarray(vj, dtype=float))
    if vi.shape != vj.shape or vi.size != params.q:
        raise ConfigError(
            f"dimension mismatch: vi {vi.shape}, vj {vj.shape}, phi has {params.q} entries"
        )
    d2 = (vi - vj) ** 2
    return float(params.sigma_f2 * np.exp(-np.sum(d2 / params.phi)))


def pairwise_sqdists(v: np.ndarray) -> np.ndarray:
    """Per-covariate squared distance stack, shape (q, n, n).

    Precomputed once per dataset so repeated kernel evaluations during MCMC
    reduce to a tensor contraction.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 2:
        raise ConfigError("v must be an n x q matrix")
    diff = v.T[:, :, None] - v.T[:, None, :]
    return diff**2


def kernel_matrix_from_dists(d2: np.ndarray, params: KernelParams) -> np.ndarray:
    """K from a precomputed distance stack (q, n, n)."""
    if d2.shape[0] != params.q:
        raise ConfigError(f"distance stack has {d2.shape[0]} covariates, phi has {params.q}")
    expo = np.tensordot(1.0 / params.phi, d2, axes=1)
    return params.sigma_f2 * np.exp(-expo)


def build_covariance(v: np.ndarray, params: KernelParams) -> np.ndarray:
    """Sigma = K(V) + sigma_02 * I for an n x q kernel-covariate matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if not np.all(np.isfinite(v)):
        raise DataError("kernel covariates contain non-finite values")
    n = v.shape[0]
    if n < 1:
        raise DataError("need at least one unit")
    k = kernel_matrix_from_dists(pairwise_sqdists(v), params)
    return k + params.sigma_02 * np.eye(n)


def standardize_columns(v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Center/scale columns; drop zero-variance columns with a warning.

    Returns (standardized matrix, means, sds, kept-column index).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    mu = v.mean(axis=0)
    sd = v.std(axis=0, ddof=1) if v.shape[0] > 1 else np.zeros(v.shape[1])
    keep = np.flatnonzero(sd > 0)
    if keep.size < v.shape[1]:
        dropped = sorted(set(range(v.shape[1])) - set(keep.tolist()))
        warnings.warn(f"dropping constant kernel covariate column(s) {dropped}")
    vs = (v[:, keep] - mu[keep]) / sd[keep]
    return vs, mu[keep], sd[keep], keep


class CholFactor:
    """Cholesky factorization of an SPD matrix with escalating jitter."""

    def __init__(self, sigma: np.ndarray):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ConfigError("sigma must be square")
        self.n = sigma.shape[0]
        mean_diag = float(np.mean(np.diag(sigma)))
        tried = []
        for eps in JITTER_STEPS:
            try:
                mat = sigma if eps == 0.0 else sigma + eps * mean_diag * np.eye(self.n)
                self.c_and_lower = cho_factor(mat, lower=True, check_finite=False)
                self.jitter = eps * mean_diag
                return
            except np.linalg.LinAlgError:
                tried.append(eps)
            except ValueError as exc:  # non-finite entries
                raise NumericalError(f"covariance contains invalid values: {exc}") from exc
        raise NumericalError(f"Cholesky failed after jitter levels {tried}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return _cho_solve(self.c_and_lower, b, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.c_and_lower[0]))))


def chol_solve(sigma: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve sigma @ x = b via Cholesky with the jitter policy."""
    return CholFactor(sigma).solve(np.asarray(b, dtype=float))


def block_inverse(block: CompoundSymmetryBlock) -> np.ndarray:
    """Closed-form inverse of a compound-symmetry block.

    For scale * [(1-rho) I + rho J] the inverse is
    (1 / (scale (1-rho))) [I - rho / (1 - rho + n rho) J].
    """
    n, rho, scale = block.n, block.rho, block.scale
    if n == 1:
        return np.array([[1.0 / scale]])
    denom = scale * (1.0 - rho) * (1.0 - rho + n * rho)
    if denom == 0.0 or not np.isfinite(denom):
        raise NumericalError(
            f"singular compound-symmetry block: n={n}, rho={rho}, scale={scale}"
        )
    coef = 1.0 / (scale * (1.0 - rho))
    shrink = rho / (1.0 - rho + n * rho)
    return coef * (np.eye(n) - shrink * np.ones((n, n)))
