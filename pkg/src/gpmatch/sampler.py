"""Metropolis-within-Gibbs sampler for the partially linear GP model.

Each sweep first updates the covariance hyperparameters (signal variance,
length scales, noise variance) one at a time by Gaussian random walks on the
log scale, then draws the regression coefficients from their conjugate
multivariate-normal conditional. Per-draw average treatment effects are
recorded alongside the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, NumericalError
from .kernels import CholFactor, KernelParams, pairwise_sqdists, standardize_columns
from .model import (
    Dataset,
    ModelSpec,
    PriorConfig,
    alpha_index,
    build_design,
    sigma_lm2_anchor,
    treatment_basis,
)

ADAPT_TARGET = 0.44  # componentwise random-walk acceptance target


@dataclass(frozen=True)
class McmcConfig:
    n_burnin: int = 5000
    n_keep: int = 5000
    seed: int = 0
    proposal_scale: float = 0.5
    adapt_burnin: bool = True

    def __post_init__(self):
        if self.n_burnin < 0 or self.n_keep < 1:
            raise ConfigError("need n_burnin >= 0 and n_keep >= 1")


@dataclass(frozen=True)
class PosteriorChain:
    """Retained draws: gamma coefficients, kernel parameters, per-draw ATE."""

    gamma_draws: np.ndarray  # n_keep x d
    kernel_draws: np.ndarray  # n_keep x (q + 2): sigma_f2, phi_1..q, sigma_02
    ate_draws: np.ndarray  # n_keep
    acceptance_rates: dict[str, float]
    tau_basis: np.ndarray  # n x k basis multiplying the effect coefficients
    alpha_cols: np.ndarray  # columns of gamma holding the effect coefficients

    @property
    def n_keep(self) -> int:
        return self.ate_draws.size


@dataclass(frozen=True)
class AteEstimate:
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    tau_i: np.ndarray


def _log_ig(x: float, a: float, b: float) -> float:
    return a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(x) - b / x


class _KernelState:
    """Cached covariance state for one chain.

    Caches the unit-variance correlation matrix (so signal/noise proposals
    avoid rebuilding the exponential part) and the current Cholesky factor.
    """

    def __init__(self, d2stack, params: KernelParams, prior: PriorConfig, n: int | None = None,
                 prior_only=False):
        self.d2 = d2stack  # (q, n, n) or None when q == 0
        # without a distance stack (prior-only runs) the length-scale count
        # still comes from the parameter vector so every phi_k is updated
        self.q = d2stack.shape[0] if d2stack is not None else len(params.phi)
        self.n = d2stack.shape[1] if d2stack is not None else (n if n is not None else 1)
        self.prior = prior
        self.prior_only = prior_only
        self.params = params
        self.corr = self._corr(params.phi)
        self.factor: CholFactor | None = None
        self.loglik = 0.0
        self._resid = None
        if not prior_only:
            self.factor = CholFactor(self._sigma(params, self.corr))

    def _corr(self, phi):
        if self.q == 0 or self.d2 is None:
            return None
        expo = np.tensordot(1.0 / phi, self.d2, axes=1)
        return np.exp(-expo)

    def _sigma(self, params: KernelParams, corr):
        if corr is None:
            return params.sigma_02 * np.eye(self.n)
        return params.sigma_f2 * corr + params.sigma_02 * np.eye(self.n)

    def set_residual(self, r: np.ndarray):
        self._resid = r
        if not self.prior_only:
            self.loglik = self._loglik(self.factor, r)

    def _loglik(self, factor: CholFactor, r: np.ndarray) -> float:
        quad = float(r @ factor.solve(r))
        return -0.5 * (self.n * math.log(2.0 * math.pi) + factor.logdet() + quad)

    def _log_prior(self, params: KernelParams) -> float:
        p = self.prior
        out = _log_ig(params.sigma_02, p.a0, p.b0) + _log_ig(params.sigma_f2, p.af, p.bf)
        for ph in params.phi:
            out += _log_ig(ph, p.a_phi, p.b_phi)
        # Jacobian of the log-scale random walk
        out += math.log(params.sigma_02) + math.log(params.sigma_f2)
        out += float(np.sum(np.log(params.phi)))
        return out

    def sweep(self, scales: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One one-at-a-time Metropolis sweep; returns per-parameter accept flags."""
        accepts = np.zeros(self.q + 2, dtype=bool)
        cur_lp = self._log_prior(self.params)
        for j in range(self.q + 2):
            step = scales[j] * rng.standard_normal()
            prop, new_corr = self._proposed(j, step)
            if prop is None:
                continue
            try:
                if self.prior_only:
                    new_factor, new_loglik = None, 0.0
                else:
                    new_factor = CholFactor(self._sigma(prop, new_corr))
                    new_loglik = self._loglik(new_factor, self._resid)
            except NumericalError:
                continue  # unfactorable proposal counts as a rejection
            new_lp = self._log_prior(prop)
            log_ratio = (new_loglik + new_lp) - (self.loglik + cur_lp)
            if log_ratio >= 0 or math.log(rng.uniform()) < log_ratio:
                self.params = prop
                self.corr = new_corr
                self.factor = new_factor
                self.loglik = new_loglik
                cur_lp = new_lp
                accepts[j] = True
        return accepts

    def _proposed(self, j: int, step: float):
        """Parameter j on the log scale: 0 = sigma_f2, 1..q = phi, q+1 = sigma_02."""
        p = self.params
        try:
            if j == 0:
                prop = KernelParams(p.sigma_f2 * math.exp(step), p.phi, p.sigma_02)
                return prop, self.corr
            if j == self.q + 1:
                prop = KernelParams(p.sigma_f2, p.phi, p.sigma_02 * math.exp(step))
                return prop, self.corr
            phi = p.phi.copy()
            phi[j - 1] *= math.exp(step)
            prop = KernelParams(p.sigma_f2, phi, p.sigma_02)
            return prop, self._corr(phi)
        except (OverflowError, ConfigError):
            return None, None


def sample_gamma(y, z, sigma, prior: PriorConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw gamma from its multivariate-normal conditional given the covariance.

    Posterior precision is Z' Sigma^-1 Z + Z'Z / (omega * sigma_lm2); the mean
    solves that system against Z' Sigma^-1 y.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    factor = sigma if isinstance(sigma, CholFactor) else CholFactor(np.asarray(sigma, dtype=float))
    si_z = factor.solve(z)
    prec = z.T @ si_z + (z.T @ z) / (prior.omega * prior.sigma_lm2)
    pf = CholFactor(prec)
    mean = pf.solve(z.T @ factor.solve(y))
    # x = L^-T xi has covariance (L L')^-1 = prec^-1
    lower = np.tril(pf.c_and_lower[0])
    xi = rng.standard_normal(z.shape[1])
    from scipy.linalg import solve_triangular

    return mean + solve_triangular(lower.T, xi, lower=False, check_finite=False)


def sample_kernel_params(
    y,
    z,
    gamma,
    current: KernelParams,
    prior: PriorConfig,
    scales,
    rng: np.random.Generator,
    v=None,
    d2stack=None,
    prior_only: bool = False,
):
    """One Metropolis sweep over the kernel parameters; returns (params, accepts).

    Functional wrapper over the cached chain state; pass either the kernel
    covariates `v` or a precomputed squared-distance stack.
    """
    if d2stack is None:
        d2stack = None if (v is None or np.size(v) == 0) else pairwise_sqdists(np.asarray(v, float))
    n = None if y is None else np.size(y)
    state = _KernelState(d2stack, current, prior, n=n, prior_only=prior_only)
    if not prior_only:
        r = np.asarray(y, float) - np.asarray(z, float) @ np.asarray(gamma, float)
        state.set_residual(r)
    accepts = state.sweep(np.asarray(scales, dtype=float), rng)
    return state.params, accepts


def run_chain(
    ds: Dataset,
    spec: ModelSpec,
    prior: PriorConfig | None = None,
    mcmc: McmcConfig | None = None,
) -> PosteriorChain:
    """Run the full Metropolis-within-Gibbs chain and retain the last n_keep sweeps."""
    prior = prior if prior is not None else PriorConfig()
    mcmc = mcmc if mcmc is not None else McmcConfig()
    if prior.sigma_lm2 is None:
        prior = PriorConfig(
            omega=prior.omega,
            a0=prior.a0,
            af=prior.af,
            a_phi=prior.a_phi,
            b_phi=prior.b_phi,
            sigma_lm2=sigma_lm2_anchor(ds),
        )

    rng = np.random.default_rng(mcmc.seed)
    z = build_design(ds, spec)
    basis = treatment_basis(ds, spec)
    acols = alpha_index(ds, spec)

    v_raw = spec.select_v(ds.v)
    if v_raw.shape[1] > 0:
        v_std, _, _, _ = standardize_columns(v_raw)
    else:
        v_std = v_raw
    q = v_std.shape[1]
    d2stack = pairwise_sqdists(v_std) if q > 0 else None

    # Initialization: pilot OLS for gamma, anchor split for the variances.
    gamma, *_ = np.linalg.lstsq(z, ds.y, rcond=None)
    init = KernelParams(
        sigma_f2=prior.sigma_lm2 / 2.0,
        phi=np.ones(q),
        sigma_02=prior.sigma_lm2 / 2.0,
    )
    state = _KernelState(d2stack, init, prior, n=ds.n)
    n_par = state.q + 2
    scales = np.full(n_par, mcmc.proposal_scale)

    total = mcmc.n_burnin + mcmc.n_keep
    d = z.shape[1]
    gamma_draws = np.empty((mcmc.n_keep, d))
    kernel_draws = np.empty((mcmc.n_keep, state.q + 2))
    ate_draws = np.empty(mcmc.n_keep)
    accept_counts = np.zeros(n_par)
    kept = 0

    for t in range(total):
        try:
            state.set_residual(ds.y - z @ gamma)
            accepts = state.sweep(scales, rng)
            gamma = sample_gamma(ds.y, z, state.factor, prior, rng)
        except NumericalError as exc:
            raise NumericalError(f"sweep {t}: {exc}") from exc

        in_burnin = t < mcmc.n_burnin
        if in_burnin and mcmc.adapt_burnin:
            step = min(0.1, 3.0 / math.sqrt(t + 1.0))
            scales *= np.exp(step * (accepts.astype(float) - ADAPT_TARGET))
            np.clip(scales, 1e-3, 10.0, out=scales)
        if not in_burnin:
            accept_counts += accepts
            p = state.params
            gamma_draws[kept] = gamma
            kernel_draws[kept] = np.concatenate([[p.sigma_f2], p.phi, [p.sigma_02]])
            ate_draws[kept] = float(np.mean(basis @ gamma[acols]))
            kept += 1

    rates = accept_counts / mcmc.n_keep
    names = ["sigma_f2"] + [f"phi_{k+1}" for k in range(state.q)] + ["sigma_02"]
    return PosteriorChain(
        gamma_draws=gamma_draws,
        kernel_draws=kernel_draws,
        ate_draws=ate_draws,
        acceptance_rates=dict(zip(names, rates.tolist())),
        tau_basis=basis,
        alpha_cols=acols,
    )


def summarize(chain: PosteriorChain) -> AteEstimate:
    """Posterior mean/sd and equal-tailed 95% interval of the ATE draws."""
    if chain.n_keep < 2:
        raise ConfigError("need at least two retained draws to summarize")
    draws = chain.ate_draws
    lo, hi = np.percentile(draws, [2.5, 97.5])
    alpha_mean = chain.gamma_draws[:, chain.alpha_cols].mean(axis=0)
    tau_i = chain.tau_basis @ alpha_mean
    return AteEstimate(
        mean=float(draws.mean()),
        sd=float(draws.std(ddof=1)),
        ci_low=float(lo),
        ci_high=float(hi),
        tau_i=tau_i,
    )
