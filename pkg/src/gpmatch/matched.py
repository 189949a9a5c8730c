"""Closed-form GLS treatment-effect estimators for known matching structures.

When units fall into matched blocks, the covariance is block compound
symmetry with scale 1 + sigma_02 and within-block correlation
rho = 1 / (1 + sigma_02). The GLS estimate of the treatment effect then
decomposes into a weighted sum of a within-block contrast and an
overall-mean contrast.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .errors import DataError, NumericalError
from .kernels import CholFactor, CompoundSymmetryBlock


@dataclass(frozen=True)
class MatchingStructure:
    """Block assignment of units; labels must tile {0..L-1}."""

    block_of: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.block_of, dtype=int).ravel()
        if labels.size == 0:
            raise DataError("empty matching structure")
        uniq = np.unique(labels)
        if uniq[0] != 0 or not np.array_equal(uniq, np.arange(uniq.size)):
            raise DataError("block labels must be contiguous integers starting at 0")
        object.__setattr__(self, "block_of", labels)

    @property
    def n(self) -> int:
        return self.block_of.size

    @property
    def n_blocks(self) -> int:
        return int(self.block_of.max()) + 1

    def counts(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(n_l, n_l0, n_l1) per block for a 0/1 treatment vector."""
        a = np.asarray(a, dtype=float).ravel()
        n1 = np.bincount(self.block_of, weights=a, minlength=self.n_blocks)
        nl = np.bincount(self.block_of, minlength=self.n_blocks).astype(float)
        return nl, nl - n1, n1

    def block_covariance(self, sigma02: float) -> np.ndarray:
        """Dense block-diagonal covariance implied by the structure."""
        scale = 1.0 + sigma02
        rho = 1.0 / scale
        nl = np.bincount(self.block_of, minlength=self.n_blocks)
        blocks = [CompoundSymmetryBlock(int(m), rho, scale).dense() for m in nl]
        full = block_diag(*blocks)
        # undo the block ordering: block_diag groups units by label
        order = np.argsort(self.block_of, kind="stable")
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        return full[np.ix_(inv, inv)]


@dataclass(frozen=True)
class GlsEstimate:
    mu_hat: float
    tau_hat: float
    lam: float
    tau1_hat: float
    tau0_hat: float
    c1: float
    c2: float
    d1: float
    d2: float
    q_l: np.ndarray


def gls_estimate(y: np.ndarray, a: np.ndarray, sigma: np.ndarray) -> tuple[float, float]:
    """GLS fit of y on (1, A) under covariance sigma; returns (mu_hat, tau_hat)."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    if a.min() == a.max():
        raise DataError("single-arm data: design (1, A) is rank deficient")
    design = np.column_stack([np.ones(y.size), a])
    factor = CholFactor(np.asarray(sigma, dtype=float))
    si_d = factor.solve(design)
    lhs = design.T @ si_d
    rhs = design.T @ factor.solve(y)
    mu_hat, tau_hat = np.linalg.solve(lhs, rhs)
    return float(mu_hat), float(tau_hat)


def weighted_sum_estimate(
    y: np.ndarray, a: np.ndarray, ms: MatchingStructure, sigma02: float
) -> GlsEstimate:
    """Closed-form block GLS estimate via the weighted-sum decomposition.

    tau_hat = lam * tau1_hat + (1 - lam) * tau0_hat, where tau1 is the
    q-weighted within-block contrast and tau0 the q-weighted overall
    contrast; q_l = 1 / (1 - rho + rho * n_l).
    """
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    if y.size != ms.n or a.size != ms.n:
        raise DataError("y/a length does not match the matching structure")
    if sigma02 < 0:
        raise DataError("sigma02 must be nonnegative")
    scale = 1.0 + sigma02
    rho = 1.0 / scale

    nl, n0, n1 = ms.counts(a)
    q_l = 1.0 / (1.0 - rho + rho * nl)
    sum1 = np.bincount(ms.block_of, weights=a * y, minlength=ms.n_blocks)
    sum0 = np.bincount(ms.block_of, weights=(1.0 - a) * y, minlength=ms.n_blocks)
    with np.errstate(invalid="ignore", divide="ignore"):
        ybar1 = np.where(n1 > 0, sum1 / np.maximum(n1, 1), 0.0)
        ybar0 = np.where(n0 > 0, sum0 / np.maximum(n0, 1), 0.0)

    # blocks missing one arm contribute zero through n_l0 * n_l1 = 0
    both = (n0 > 0) & (n1 > 0)
    delta = np.where(both, ybar1 - ybar0, 0.0)

    c1 = float(np.sum(q_l * nl) * np.sum(q_l * n1 * n0 * delta))
    d1 = float(np.sum(q_l * nl) * np.sum(q_l * n1 * n0))
    c2 = float(
        np.sum(q_l * n0) * np.sum(q_l * n1 * ybar1)
        - np.sum(q_l * n1) * np.sum(q_l * n0 * ybar0)
    )
    d2 = float(np.sum(q_l * n1) * np.sum(q_l * n0))

    tau0_hat = c2 / d2 if d2 != 0 else float("nan")
    if d1 == 0.0:
        warnings.warn("no block contains both arms; within-block contrast undefined")
        lam = 0.0
        tau1_hat = float("nan")
        tau_hat = tau0_hat
    else:
        lam = rho * d1 / (rho * d1 + (1.0 - rho) * d2)
        tau1_hat = c1 / d1
        tau_hat = lam * tau1_hat + (1.0 - lam) * tau0_hat

    # mu_hat from the first GLS normal equation (1'W1) mu + (1'WA) tau = 1'WY;
    # the common 1/scale factor cancels
    s_l = sum1 + sum0
    b1 = float(np.sum(q_l * s_l))
    a11 = float(np.sum(q_l * nl))
    a12 = float(np.sum(q_l * n1))
    mu_hat = (b1 - a12 * tau_hat) / a11

    return GlsEstimate(
        mu_hat=mu_hat,
        tau_hat=float(tau_hat),
        lam=float(lam),
        tau1_hat=float(tau1_hat),
        tau0_hat=float(tau0_hat),
        c1=c1,
        c2=c2,
        d1=d1,
        d2=d2,
        q_l=q_l,
    )


def stratified_lambda(ms: MatchingStructure, a: np.ndarray, sigma02: float) -> float:
    """Stratified-design weight on the within-stratum contrast.

    lambda = N * sum_l n_l0 n_l1 / (n1 n0 sigma02 + N * sum_l n_l0 n_l1);
    equals 1 when sigma02 = 0 and decreases monotonically in sigma02.
    """
    nl, n0, n1 = ms.counts(np.asarray(a, dtype=float).ravel())
    cross = float(np.sum(n0 * n1))
    n_tot = float(ms.n)
    n1_tot = float(n1.sum())
    n0_tot = float(n0.sum())
    denom = n1_tot * n0_tot * sigma02 + n_tot * cross
    if denom == 0.0:
        raise NumericalError("degenerate structure: no within-stratum treated/control pairs")
    return n_tot * cross / denom
