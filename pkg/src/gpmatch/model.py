"""Data containers, design matrices and prior hyperparameters."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Dataset:
    """Outcomes y, binary treatment a, mean covariates x, kernel covariates v."""

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        a = np.asarray(self.a, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.size == 0:
            x = x.reshape(y.size, 0)
        if v.ndim == 1:
            v = v[:, None]
        if v.size == 0:
            v = v.reshape(y.size, 0)
        n = y.size
        if a.size != n or x.shape[0] != n or v.shape[0] != n:
            raise DataError(
                f"length mismatch: y={n}, a={a.size}, x={x.shape[0]}, v={v.shape[0]}"
            )
        if n == 0:
            raise DataError("empty dataset")
        if not np.all(np.isin(a, (0.0, 1.0))):
            raise DataError("treatment indicator must contain only 0/1")
        if a.sum() == 0 or a.sum() == n:
            raise DataError("both treatment arms must be present")
        for name, arr in (("y", y), ("a", a), ("x", x), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """Mean-function layout and kernel-covariate selection.

    mean_covariates=False gives the treatment-only mean (intercept plus
    treatment indicator); True adds the X columns and, when interactions is
    True, the treatment-by-X columns.
    """

    mean_covariates: bool = False
    interactions: bool = True
    kernel_columns: tuple[int, ...] | None = None  # None -> all columns of v

    def select_v(self, v: np.ndarray) -> np.ndarray:
        if self.kernel_columns is None:
            return v
        cols = list(self.kernel_columns)
        if any(c < 0 or c >= v.shape[1] for c in cols):
            raise ConfigError(f"kernel_columns {cols} out of range for q={v.shape[1]}")
        return v[:, cols]


@dataclass
class PriorConfig:
    """Hyperparameters of the g-type coefficient prior and IG variance priors."""

    omega: float = 1e6
    a0: float = 2.0
    af: float = 2.0
    a_phi: float = 1.0
    b_phi: float = 1.0
    sigma_lm2: float | None = None  # filled at fit time from the pilot OLS

    def __post_init__(self):
        if self.omega <= 0:
            raise ConfigError("omega must be positive")

    @property
    def b0(self) -> float:
        self._require_anchor()
        return self.sigma_lm2 / 2.0

    @property
    def bf(self) -> float:
        self._require_anchor()
        return self.sigma_lm2 / 2.0

    def _require_anchor(self):
        if self.sigma_lm2 is None or self.sigma_lm2 <= 0:
            raise ConfigError("sigma_lm2 anchor not set; call sigma_lm2_anchor first")


def build_design(ds: Dataset, spec: ModelSpec) -> np.ndarray:
    """Design matrix with rows (1, x_i', a_i, a_i * x_i').

    The treatment-only spec (or p = 0) collapses to (1, a_i).
    """
    cols = [np.ones(ds.n)]
    if spec.mean_covariates and ds.p > 0:
        cols.append(ds.x)
        cols.append(ds.a)
        if spec.interactions:
            cols.append(ds.a[:, None] * ds.x)
    else:
        cols.append(ds.a)
    return np.column_stack(cols)


def treatment_basis(ds: Dataset, spec: ModelSpec) -> np.ndarray:
    """Columns of the design that multiply the treatment-effect coefficients.

    Rows are (1,) for the treatment-only mean and (1, x_i') when interactions
    are included; the per-unit effect is this basis times alpha.
    """
    if spec.mean_covariates and ds.p > 0 and spec.interactions:
        return np.column_stack([np.ones(ds.n), ds.x])
    return np.ones((ds.n, 1))


def alpha_index(ds: Dataset, spec: ModelSpec) -> np.ndarray:
    """Column indices of the treatment-effect coefficients within gamma."""
    if spec.mean_covariates and ds.p > 0:
        start = 1 + ds.p
        width = 1 + (ds.p if spec.interactions else 0)
        return np.arange(start, start + width)
    return np.array([1])


def sigma_lm2_anchor(ds: Dataset) -> float:
    """Residual variance of the pilot OLS of y on (1, A, X), with a floor.

    Falls back to var(y) when the pilot design is rank deficient, and floors
    the result so the IG priors stay proper when the pilot fits perfectly.
    """
    z = np.column_stack([np.ones(ds.n), ds.a, ds.x])
    dof = ds.n - z.shape[1]
    vy = float(np.var(ds.y, ddof=1)) if ds.n > 1 else 0.0
    if dof <= 0:
        raise DataError(f"too few units (n={ds.n}) for the pilot regression")
    coef, _, rank, _ = np.linalg.lstsq(z, ds.y, rcond=None)
    if rank < z.shape[1]:
        warnings.warn("pilot regression design is rank deficient; using var(y)")
        anchor = vy
    else:
        resid = ds.y - z @ coef
        anchor = float(resid @ resid) / dof
    return max(anchor, 1e-8 * vy, 1e-12)
