"""Comparator estimators: OLS, logistic propensity scores, quintile
subclassification, PS-adjusted regressions (linear and cubic B-spline),
AIPTW, and Mahalanobis caliper matching."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.stats import norm

from .errors import DataError, NumericalError

PS_CLIP = 1e-6
MAX_LINPRED = 30.0  # l-inf cap on the logistic linear predictor


@dataclass(frozen=True)
class PropensityFit:
    coef: np.ndarray
    ps: np.ndarray
    converged: bool


@dataclass(frozen=True)
class EstimatorResult:
    ate: float
    se: float
    ci_low: float
    ci_high: float
    n_dropped: int = 0
    extras: dict = field(default_factory=dict)


def _wald_result(ate: float, se: float, n_dropped: int = 0, **extras) -> EstimatorResult:
    half = norm.ppf(0.975) * se
    return EstimatorResult(
        ate=float(ate),
        se=float(se),
        ci_low=float(ate - half),
        ci_high=float(ate + half),
        n_dropped=n_dropped,
        extras=extras,
    )


def ols(y: np.ndarray, design: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares fit; returns (coefficients, classical covariance).

    Raises on rank deficiency, naming the dependent columns.
    """
    y = np.asarray(y, dtype=float).ravel()
    design = np.asarray(design, dtype=float)
    n, k = design.shape
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(float).eps * (diag.max() if diag.size else 1.0)
    bad = np.flatnonzero(diag < tol)
    if bad.size:
        raise NumericalError(f"rank-deficient design: dependent column(s) {bad.tolist()}")
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - design @ coef
    dof = max(n - k, 1)
    s2 = float(resid @ resid) / dof
    rinv = np.linalg.inv(r)
    cov = s2 * (rinv @ rinv.T)
    return coef, cov


def ols_ate(y: np.ndarray, a: np.ndarray, covariates: np.ndarray | None) -> EstimatorResult:
    """Linear regression of y on (1, A, covariates); ATE is the A coefficient."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    cols = [np.ones(y.size), a]
    if covariates is not None and np.size(covariates) > 0:
        cov_mat = np.asarray(covariates, dtype=float)
        if cov_mat.ndim == 1:
            cov_mat = cov_mat[:, None]
        cols.append(cov_mat)
    design = np.column_stack(cols)
    coef, cov = ols(y, design)
    return _wald_result(coef[1], np.sqrt(cov[1, 1]))


def logistic_ps(a: np.ndarray, covariates: np.ndarray) -> PropensityFit:
    """Logistic regression of treatment on (1, covariates) via IRLS.

    Separable data is flagged (converged=False) rather than raised; the
    linear predictor is capped via step halving.
    """
    a = np.asarray(a, dtype=float).ravel()
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if a.min() == a.max():
        raise DataError("both treatment classes required for the propensity fit")
    design = np.column_stack([np.ones(a.size), x])
    beta = np.zeros(design.shape[1])
    converged = False
    for _ in range(50):
        eta = design @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = design.T @ (a - p)
        if np.linalg.norm(grad, ord=np.inf) < 1e-8:
            converged = True
            break
        w = np.clip(p * (1.0 - p), 1e-10, None)
        hess = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        # step-halve until the linear predictor stays within the cap
        for _ in range(30):
            eta_new = design @ (beta + step)
            if np.linalg.norm(eta_new, ord=np.inf) <= MAX_LINPRED:
                break
            step *= 0.5
        beta = beta + step
        if np.linalg.norm(design @ beta, ord=np.inf) >= MAX_LINPRED - 1e-9:
            break  # heading to separation; keep the capped fit
    ps = 1.0 / (1.0 + np.exp(-(design @ beta)))
    return PropensityFit(coef=beta, ps=ps, converged=converged)


def qnt_ps(y: np.ndarray, a: np.ndarray, ps: np.ndarray) -> EstimatorResult:
    """Propensity-score subclassification by quintiles.

    Quintiles missing an arm are dropped with a warning; the ATE is the
    size-weighted mean of stratum differences over the admissible strata.
    """
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    ps = np.asarray(ps, dtype=float).ravel()
    edges = np.unique(np.quantile(ps, [0.2, 0.4, 0.6, 0.8]))
    strata = np.searchsorted(edges, ps, side="right")
    est_terms, n_used, dropped = [], 0, 0
    var_terms = []
    for s in np.unique(strata):
        mask = strata == s
        a_s, y_s = a[mask], y[mask]
        n1 = int(a_s.sum())
        n0 = int(mask.sum()) - n1
        if n1 == 0 or n0 == 0:
            dropped += int(mask.sum())
            continue
        diff = y_s[a_s == 1].mean() - y_s[a_s == 0].mean()
        v1 = y_s[a_s == 1].var(ddof=1) / n1 if n1 > 1 else 0.0
        v0 = y_s[a_s == 0].var(ddof=1) / n0 if n0 > 1 else 0.0
        est_terms.append((mask.sum(), diff))
        var_terms.append((mask.sum(), v1 + v0))
        n_used += int(mask.sum())
    if not est_terms:
        raise DataError("every propensity quintile lacks one treatment arm")
    if dropped:
        warnings.warn(f"{dropped} units in single-arm quintiles were dropped")
    ate = sum(w * d for w, d in est_terms) / n_used
    var = sum((w / n_used) ** 2 * v for w, v in var_terms)
    return _wald_result(ate, np.sqrt(var), n_dropped=dropped, n_strata=len(est_terms))


def aiptw(
    y: np.ndarray,
    a: np.ndarray,
    ps: np.ndarray,
    m1: np.ndarray,
    m0: np.ndarray,
) -> EstimatorResult:
    """Augmented inverse-probability weighting with influence-function SE."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    e = np.clip(np.asarray(ps, dtype=float).ravel(), PS_CLIP, 1.0 - PS_CLIP)
    m1 = np.asarray(m1, dtype=float).ravel()
    m0 = np.asarray(m0, dtype=float).ravel()
    infl = a * (y - m1) / e + m1 - (1.0 - a) * (y - m0) / (1.0 - e) - m0
    ate = float(infl.mean())
    se = float(infl.std(ddof=1) / np.sqrt(infl.size))
    return _wald_result(ate, se)


def aiptw_with_ols_outcomes(
    y: np.ndarray, a: np.ndarray, ps: np.ndarray, covariates: np.ndarray
) -> EstimatorResult:
    """AIPTW using arm-specific OLS outcome regressions on the covariates."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    design = np.column_stack([np.ones(y.size), x])
    preds = {}
    for arm in (0, 1):
        mask = a == arm
        coef, *_ = np.linalg.lstsq(design[mask], y[mask], rcond=None)
        preds[arm] = design @ coef
    return aiptw(y, a, ps, preds[1], preds[0])


def ps_spline_basis(ps: np.ndarray) -> np.ndarray:
    """Cubic B-spline basis with interior knots at PS quintiles."""
    ps = np.asarray(ps, dtype=float).ravel()
    lo, hi = ps.min(), ps.max()
    if hi - lo < 1e-12:
        return np.ones((ps.size, 1))
    interior = np.unique(np.quantile(ps, [0.2, 0.4, 0.6, 0.8]))
    interior = interior[(interior > lo) & (interior < hi)]
    knots = np.concatenate([[lo] * 4, interior, [hi] * 4])
    return BSpline.design_matrix(np.clip(ps, lo, hi), knots, 3).toarray()


def lm_ps(y: np.ndarray, a: np.ndarray, ps: np.ndarray, mode: str = "linear") -> EstimatorResult:
    """Regression adjustment on the propensity score, linear or cubic B-spline."""
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    ps = np.asarray(ps, dtype=float).ravel()
    if mode == "linear":
        if ps.max() - ps.min() < 1e-12:
            basis = np.empty((y.size, 0))
        else:
            basis = ps[:, None]
        design = np.column_stack([np.ones(y.size), a, basis])
    elif mode == "cubic_bspline":
        basis = ps_spline_basis(ps)
        # the basis sums to one per row, so drop the intercept it spans
        design = np.column_stack([np.ones(y.size), a, basis[:, 1:]])
    else:
        raise DataError(f"unknown lm_ps mode {mode!r}")
    # drop collinear basis columns rather than fail
    while design.shape[1] > 2:
        try:
            coef, cov = ols(y, design)
            return _wald_result(coef[1], np.sqrt(cov[1, 1]))
        except NumericalError:
            warnings.warn("dropping a collinear propensity basis column")
            design = design[:, :-1]
    coef, cov = ols(y, design)
    return _wald_result(coef[1], np.sqrt(cov[1, 1]))


def md_match(
    y: np.ndarray, a: np.ndarray, covariates: np.ndarray, caliper: float
) -> EstimatorResult:
    """Nearest-control Mahalanobis matching with replacement under a caliper.

    For each treated unit the nearest control by Mahalanobis distance is
    selected among controls within the caliper on every standardized
    coordinate; treated units with no admissible control are dropped. Ties
    break toward the lowest index.
    """
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if caliper <= 0:
        raise DataError("caliper must be positive")
    cov = np.cov(x, rowvar=False)
    cov = np.atleast_2d(cov)
    try:
        cov_inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("pooled covariate covariance is singular") from exc
    sd = np.sqrt(np.diag(cov))
    sd = np.where(sd > 0, sd, 1.0)

    treated = np.flatnonzero(a == 1)
    controls = np.flatnonzero(a == 0)
    diffs, dropped = [], 0
    for i in treated:
        delta = x[controls] - x[i]
        within = np.all(np.abs(delta) / sd <= caliper, axis=1)
        if not np.any(within):
            dropped += 1
            continue
        cand = controls[within]
        d = delta[within]
        md2 = np.einsum("ij,jk,ik->i", d, cov_inv, d)
        j = cand[int(np.argmin(md2))]
        diffs.append(y[i] - y[j])
    if not diffs:
        raise DataError("no treated unit found an admissible match")
    diffs = np.asarray(diffs)
    ate = float(diffs.mean())
    se = float(diffs.std(ddof=1) / np.sqrt(diffs.size)) if diffs.size > 1 else 0.0
    return _wald_result(ate, se, n_dropped=dropped, n_matched=int(diffs.size))
