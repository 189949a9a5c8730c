"""Weight-space quantities and the doubly robust estimating equation.

With Sigma = K + sigma_02 I fixed, the model predicts each unit's outcome as
a weighted average of the sample; the same weights applied to the treatment
indicator give a smoothed treatment propensity. The treatment effect solving
the resulting estimating equation is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import DataError, NumericalError
from .kernels import CholFactor, KernelParams, build_covariance, kernel_matrix_from_dists, pairwise_sqdists


@dataclass(frozen=True)
class WeightSpace:
    """Row-normalized prediction weights and the smoothed outcome/treatment."""

    w: np.ndarray
    y_tilde: np.ndarray
    a_tilde: np.ndarray


@dataclass(frozen=True)
class ResidualReport:
    tau: float
    residual_correlation: float
    zero_variance: bool
    overlap_abs_dev: dict[str, float]  # summary of |A_i - A~_i|

    def to_dict(self) -> dict:
        return asdict(self)


def weight_matrix(
    v: np.ndarray,
    params: KernelParams,
    y: np.ndarray,
    a: np.ndarray,
    normalize: bool = True,
) -> WeightSpace:
    """Prediction weights W = rownorm(K Sigma^-1) plus smoothed y and a.

    With normalize=False the raw rows of K Sigma^-1 are used instead of the
    row-normalized version.
    """
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    if y.size != n or a.size != n:
        raise DataError("y/a length does not match v")
    k = kernel_matrix_from_dists(pairwise_sqdists(v), params)
    sigma = k + params.sigma_02 * np.eye(n)
    factor = CholFactor(sigma)
    raw = factor.solve(k).T  # row i holds k(v_i)' Sigma^-1
    if normalize:
        row_sums = raw.sum(axis=1)
        bad = np.flatnonzero(row_sums <= 0)
        if bad.size:
            raise NumericalError(f"degenerate weights: row(s) {bad.tolist()} sum to <= 0")
        w = raw / row_sums[:, None]
    else:
        w = raw
    return WeightSpace(w=w, y_tilde=w @ y, a_tilde=w @ a)


def psi(tau: float, ws: WeightSpace, y: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Estimating-function values (Y - Y~ - tau (A - A~)) (A - A~) per unit."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    ra = a - ws.a_tilde
    ry = y - ws.y_tilde
    return (ry - tau * ra) * ra


def solve_tau(ws: WeightSpace, y: np.ndarray, a: np.ndarray) -> float:
    """Closed-form root of sum(psi) = 0."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    ra = a - ws.a_tilde
    denom = float(ra @ ra)
    if denom <= 1e-14:
        raise NumericalError(
            "no overlap information: residual treatment (A - A~) is numerically zero"
        )
    return float(((y - ws.y_tilde) @ ra) / denom)


def residual_independence_report(
    ws: WeightSpace, y: np.ndarray, a: np.ndarray, tau: float
) -> ResidualReport:
    """Correlation of outcome and treatment residuals plus an overlap profile."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    ra = a - ws.a_tilde
    ry = y - ws.y_tilde - tau * ra
    norm = float(np.linalg.norm(ry) * np.linalg.norm(ra))
    zero_var = norm == 0.0
    # uncentered correlation: the estimating equation is the raw cross moment
    corr = 0.0 if zero_var else float(ry @ ra) / norm
    dev = np.abs(ra)
    profile = {
        "min": float(dev.min()),
        "q25": float(np.percentile(dev, 25)),
        "median": float(np.percentile(dev, 50)),
        "q75": float(np.percentile(dev, 75)),
        "max": float(dev.max()),
    }
    return ResidualReport(
        tau=float(tau),
        residual_correlation=corr,
        zero_variance=zero_var,
        overlap_abs_dev=profile,
    )
