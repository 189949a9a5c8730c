"""Data-generating processes and the replicate runner for the three
benchmark studies, with the six replicate-level summary metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .errors import ConfigError
from .model import Dataset, ModelSpec
from .sampler import McmcConfig, run_chain, summarize

STUDIES = ("single_covariate", "md_comparison", "kang_schafer")
_STUDY_CODE = {name: i for i, name in enumerate(STUDIES)}

# The four (g0, g1, g2, g3) tuples of the single-covariate study.
SINGLE_COVARIATE_SETTINGS = (
    (0.5, 0.0, 0.0, math.sqrt(0.75)),
    (1.0, 0.15, 0.0, 0.0),
    (0.5, 0.0, 0.7, math.sqrt(0.75)),
    (1.0, 0.15, 0.7, 0.0),
)

DEFAULT_ESTIMATORS = {
    "single_covariate": ["gold", "gpmatch"],
    "md_comparison": ["gold", "gpmatch", "md_match_0.25", "md_match_0.5", "md_match_1.0"],
    "kang_schafer": ["gold", "gpmatch1", "gpmatch2", "lm", "lm_ps", "lm_sp_ps", "qnt_ps", "aiptw"],
}


@dataclass(frozen=True)
class SimulatedData:
    ds: Dataset
    true_ate: float
    latent: dict = field(default_factory=dict)
    study: str = ""


@dataclass(frozen=True)
class StudySpec:
    study: str
    setting: tuple | None = None  # single_covariate only: (g0, g1, g2, g3)
    n: int = 400
    n_replicates: int = 100
    seed: int = 0
    estimators: tuple[str, ...] | None = None
    mcmc_burnin: int = 5000
    mcmc_keep: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; choose from {STUDIES}")
        if self.study == "single_covariate" and self.setting is None:
            object.__setattr__(self, "setting", SINGLE_COVARIATE_SETTINGS[0])

    def desk_scale(self) -> "StudySpec":
        """Reduced-cost variant: 50 replicates, 2000+2000 sweeps."""
        return StudySpec(
            study=self.study,
            setting=self.setting,
            n=self.n,
            n_replicates=min(self.n_replicates, 50),
            seed=self.seed,
            estimators=self.estimators,
            mcmc_burnin=2000,
            mcmc_keep=2000,
            workers=self.workers,
        )


def signed_cbrt(u):
    return np.sign(u) * np.abs(u) ** (1.0 / 3.0)


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def gen_study1(n: int, gammas, rng: np.random.Generator) -> SimulatedData:
    """Single observed covariate with exponential response surface.

    y^(a) = e^x + (1 + g1 U1) a + g0 U0; assignment by
    logit p = -0.2 + cbrt(1.8 x) + g2 U2^2; observed y adds g3 * eps.
    The true effect is the sample average of 1 + g1 U1.
    """
    g0, g1, g2, g3 = (float(g) for g in gammas)
    x = rng.standard_normal(n)
    u0 = rng.standard_normal(n)
    u1 = rng.standard_normal(n)
    u2 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    p = _logistic(-0.2 + signed_cbrt(1.8 * x) + g2 * u2**2)
    a = (rng.uniform(size=n) < p).astype(float)
    unit_effects = 1.0 + g1 * u1
    y_pot = np.exp(x) + unit_effects * a + g0 * u0
    y = y_pot + g3 * eps
    ds = Dataset(y=y, a=a, x=x[:, None], v=x[:, None])
    return SimulatedData(
        ds=ds,
        true_ate=float(unit_effects.mean()),
        latent={"x": x, "propensity": p, "unit_effects": unit_effects},
        study="single_covariate",
    )


def gen_study2(n: int, rng: np.random.Generator) -> SimulatedData:
    """Two uniform covariates, cubic response in x1; true effect 5."""
    x1 = rng.uniform(-2.0, 2.0, size=n)
    x2 = rng.uniform(-2.0, 2.0, size=n)
    p = _logistic(-x1 - x2)
    a = (rng.uniform(size=n) < p).astype(float)
    y = 3.0 + 5.0 * a + x1**3 + rng.standard_normal(n)
    x = np.column_stack([x1, x2])
    ds = Dataset(y=y, a=a, x=x, v=x)
    return SimulatedData(
        ds=ds,
        true_ate=5.0,
        latent={"propensity": p},
        study="md_comparison",
    )


def gen_kang_schafer(n: int, rng: np.random.Generator) -> SimulatedData:
    """Dual-misspecification benchmark: models see nonlinear transforms of
    the latent covariates that actually drive outcome and assignment."""
    z = rng.standard_normal((n, 4))
    p = _logistic(-z[:, 0] + 0.5 * z[:, 1] - 0.25 * z[:, 2] - 0.1 * z[:, 3])
    a = (rng.uniform(size=n) < p).astype(float)
    y = (
        210.0
        + 5.0 * a
        + 27.4 * z[:, 0]
        + 13.7 * z[:, 1]
        + 13.7 * z[:, 2]
        + 13.7 * z[:, 3]
        + rng.standard_normal(n)
    )
    x1 = np.exp(z[:, 0] / 2.0)
    x2 = z[:, 1] / (1.0 + np.exp(z[:, 0])) + 10.0
    x3 = (z[:, 0] * z[:, 2] / 25.0 + 0.6) ** 3
    x4 = (z[:, 1] + z[:, 3] + 20.0) ** 2
    x = np.column_stack([x1, x2, x3, x4])
    ds = Dataset(y=y, a=a, x=x, v=x)
    return SimulatedData(
        ds=ds,
        true_ate=5.0,
        latent={"z": z, "propensity": p},
        study="kang_schafer",
    )


def generate(spec: StudySpec, rng: np.random.Generator) -> SimulatedData:
    if spec.study == "single_covariate":
        return gen_study1(spec.n, spec.setting, rng)
    if spec.study == "md_comparison":
        return gen_study2(spec.n, rng)
    return gen_kang_schafer(spec.n, rng)


def replicate_seed(spec: StudySpec, rep: int) -> np.random.SeedSequence:
    """Derived stream so every estimator within a replicate sees the same data."""
    setting_code = (
        [int(round(g * 1_000_000)) for g in spec.setting] if spec.setting else [0]
    )
    return np.random.SeedSequence(
        entropy=[int(spec.seed), _STUDY_CODE[spec.study], *setting_code, spec.n, rep]
    )


# ---------------------------------------------------------------------------
# estimator registry


def _gold(sim: SimulatedData) -> baselines.EstimatorResult:
    """OLS on the true outcome-generating regressors."""
    ds = sim.ds
    if sim.study == "single_covariate":
        covs = np.exp(sim.latent["x"])[:, None]
    elif sim.study == "md_comparison":
        covs = (ds.x[:, 0] ** 3)[:, None]
    else:
        covs = sim.latent["z"]
    return baselines.ols_ate(ds.y, ds.a, covs)


def _gpmatch(sim: SimulatedData, mcmc: McmcConfig, with_mean_covariates: bool):
    spec = ModelSpec(mean_covariates=with_mean_covariates)
    chain = run_chain(sim.ds, spec, mcmc=mcmc)
    est = summarize(chain)
    return baselines.EstimatorResult(
        ate=est.mean, se=est.sd, ci_low=est.ci_low, ci_high=est.ci_high
    )


def _ps_covariates(sim: SimulatedData, variant: int) -> np.ndarray:
    if variant == 2:
        return signed_cbrt(sim.ds.x)
    return sim.ds.x


def run_estimator(name: str, sim: SimulatedData, mcmc: McmcConfig, seed: int):
    """Dispatch one estimator by name. MCMC-based estimators derive their own
    chain seed from the replicate seed for determinism."""
    ds = sim.ds
    if name in ("gpmatch", "gpmatch1"):
        return _gpmatch(sim, McmcConfig(mcmc.n_burnin, mcmc.n_keep, seed), False)
    if name == "gpmatch2":
        return _gpmatch(sim, McmcConfig(mcmc.n_burnin, mcmc.n_keep, seed + 1), True)
    if name == "gold":
        return _gold(sim)
    if name == "lm":
        return baselines.ols_ate(ds.y, ds.a, ds.x)
    if name.startswith("md_match_"):
        caliper = float(name.removeprefix("md_match_"))
        return baselines.md_match(ds.y, ds.a, ds.x, caliper)
    variant = 2 if name.endswith("2") and not name.startswith("gpmatch") else 1
    base = name.rstrip("12")
    fit = baselines.logistic_ps(ds.a, _ps_covariates(sim, variant))
    if base == "qnt_ps":
        return baselines.qnt_ps(ds.y, ds.a, fit.ps)
    if base == "aiptw":
        return baselines.aiptw_with_ols_outcomes(ds.y, ds.a, fit.ps, ds.x)
    if base == "lm_ps":
        return baselines.lm_ps(ds.y, ds.a, fit.ps, mode="linear")
    if base == "lm_sp_ps":
        return baselines.lm_ps(ds.y, ds.a, fit.ps, mode="cubic_bspline")
    raise ConfigError(f"unknown estimator {name!r}")


# ---------------------------------------------------------------------------
# replicate runner and metrics


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    estimator: str
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    true_ate: float
    failed: bool = False
    error: str = ""


def _run_replicate(spec: StudySpec, rep: int, estimators) -> list[ReplicateRecord]:
    ss = replicate_seed(spec, rep)
    rng = np.random.default_rng(ss)
    sim = generate(spec, rng)
    chain_seed = int(ss.generate_state(1)[0] >> 1)
    mcmc = McmcConfig(spec.mcmc_burnin, spec.mcmc_keep, seed=chain_seed)
    records = []
    for name in estimators:
        try:
            res = run_estimator(name, sim, mcmc, chain_seed)
            records.append(
                ReplicateRecord(
                    rep, name, res.ate, res.se, res.ci_low, res.ci_high, sim.true_ate
                )
            )
        except Exception as exc:  # noqa: BLE001 - failures are data, not fatal
            records.append(
                ReplicateRecord(
                    rep, name, math.nan, math.nan, math.nan, math.nan, sim.true_ate,
                    failed=True, error=f"{type(exc).__name__}: {exc}",
                )
            )
    return records


def aggregate_metrics(records: list[ReplicateRecord]) -> dict[str, dict[str, float]]:
    """Six summary metrics per estimator over the successful replicates."""
    by_est: dict[str, list[ReplicateRecord]] = {}
    for r in records:
        by_est.setdefault(r.estimator, []).append(r)
    out = {}
    for name, recs in by_est.items():
        good = [r for r in recs if not r.failed]
        n_failed = len(recs) - len(good)
        if not good:
            out[name] = {"n_replicates": 0, "n_failed": n_failed}
            continue
        est = np.array([r.estimate for r in good])
        se = np.array([r.se for r in good])
        lo = np.array([r.ci_low for r in good])
        hi = np.array([r.ci_high for r in good])
        truth = np.array([r.true_ate for r in good])
        err = est - truth
        out[name] = {
            "rmse": float(np.sqrt(np.mean(err**2))),
            "mae": float(np.median(np.abs(err))),
            "bias": float(np.mean(err)),
            "rc": float(np.mean((lo <= truth) & (truth <= hi))),
            "se_avg": float(np.mean(se)),
            "se_emp": float(np.std(est, ddof=1)) if est.size > 1 else float("nan"),
            "n_replicates": len(good),
            "n_failed": n_failed,
        }
    return out


def run_study(spec: StudySpec) -> tuple[list[ReplicateRecord], dict]:
    """Run all replicates and aggregate; deterministic given the base seed."""
    estimators = tuple(spec.estimators) if spec.estimators else tuple(
        DEFAULT_ESTIMATORS[spec.study]
    )
    records: list[ReplicateRecord] = []
    if spec.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = {
                pool.submit(_run_replicate, spec, rep, estimators): rep
                for rep in range(spec.n_replicates)
            }
            by_rep = {futures[f]: f.result() for f in futures}
        for rep in range(spec.n_replicates):
            records.extend(by_rep[rep])
    else:
        for rep in range(spec.n_replicates):
            records.extend(_run_replicate(spec, rep, estimators))
    return records, aggregate_metrics(records)
