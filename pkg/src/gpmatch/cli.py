"""Command-line surface: dataset ingestion, fitting, simulation, diagnostics.

Exit codes: 0 ok, 2 data error, 3 numerical error, 4 config error. All
commands are deterministic given an explicit seed, and outputs are plain
JSON/CSV written once after all computation finishes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import diagnostics, matched, simulate
from .errors import ConfigError, DataError, GpmatchError, NumericalError
from .kernels import KernelParams, standardize_columns
from .model import Dataset, ModelSpec
from .sampler import McmcConfig, run_chain, summarize

SCHEMA_VERSION = 1


def load_csv(path: str, roles: dict) -> tuple[Dataset, dict]:
    """Load a header-ed CSV into a Dataset using a column-role mapping.

    Rows with missing values in any used column are rejected; their indices
    are returned in the report. The treatment column must be strictly 0/1.
    """
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except Exception as exc:
        raise DataError(f"failed to parse {path}: {exc}") from exc
    outcome = roles["outcome"]
    treatment = roles["treatment"]
    mean_cols = list(roles.get("mean_covariates") or [])
    kernel_cols = list(roles.get("kernel_covariates") or [])
    if outcome == treatment:
        raise ConfigError("outcome and treatment must be distinct columns")
    used = [outcome, treatment, *mean_cols, *kernel_cols]
    missing_cols = [c for c in dict.fromkeys(used) if c not in frame.columns]
    if missing_cols:
        raise DataError(f"columns not in file: {missing_cols}")
    sub = frame[list(dict.fromkeys(used))]
    bad_rows = sub.index[sub.isna().any(axis=1)].tolist()
    if bad_rows:
        sub = sub.drop(index=bad_rows)
    if sub.empty:
        raise DataError("no complete rows after removing missing values")
    a_raw = pd.to_numeric(sub[treatment], errors="coerce")
    bad_a = sub.index[~a_raw.isin([0, 1])].tolist()
    if bad_a:
        raise DataError(
            f"treatment column {treatment!r} must be 0/1; offending row(s) {bad_a}"
        )
    ds = Dataset(
        y=sub[outcome].to_numpy(dtype=float),
        a=a_raw.to_numpy(dtype=float),
        x=sub[mean_cols].to_numpy(dtype=float) if mean_cols else np.empty((len(sub), 0)),
        v=sub[kernel_cols].to_numpy(dtype=float) if kernel_cols else np.empty((len(sub), 0)),
    )
    report = {"n_rows": int(len(frame)), "n_used": int(len(sub)), "rows_rejected": bad_rows}
    return ds, report


def _write_json(path: Path, payload: dict):
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _roles_from_args(args) -> dict:
    return {
        "outcome": args.outcome,
        "treatment": args.treatment,
        "mean_covariates": args.mean_covariates.split(",") if args.mean_covariates else [],
        "kernel_covariates": args.kernel_covariates.split(",") if args.kernel_covariates else [],
    }


def cmd_analyze(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds, report = load_csv(args.dataset, _roles_from_args(args))
    spec = ModelSpec(
        mean_covariates=ds.p > 0 and not args.treatment_only_mean,
        interactions=not args.no_interactions,
    )
    mcmc = McmcConfig(n_burnin=args.burnin, n_keep=args.keep, seed=args.seed)
    chain = run_chain(ds, spec, mcmc=mcmc)
    est = summarize(chain)

    _write_json(
        outdir / "ate_summary.json",
        {
            "ate": {
                "mean": est.mean,
                "sd": est.sd,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
            },
            "tau_i": [float(t) for t in est.tau_i],
            "acceptance_rates": chain.acceptance_rates,
            "data_report": report,
            "seed": args.seed,
        },
    )

    kernel_names = [f"kernel_{k}" for k in chain.acceptance_rates]
    trace = pd.DataFrame(
        np.column_stack([chain.ate_draws, chain.gamma_draws, chain.kernel_draws]),
        columns=["ate"]
        + [f"gamma_{j}" for j in range(chain.gamma_draws.shape[1])]
        + kernel_names,
    )
    trace.to_csv(outdir / "chain_trace.csv", index=False, float_format="%.10g")

    # diagnostics at the posterior-mean kernel parameters
    v_raw = ds.v
    if v_raw.shape[1] > 0:
        v_std, *_ = standardize_columns(v_raw)
        km = chain.kernel_draws.mean(axis=0)
        params = KernelParams(sigma_f2=km[0], phi=km[1:-1], sigma_02=km[-1])
        ws = diagnostics.weight_matrix(v_std, params, ds.y, ds.a)
        tau = diagnostics.solve_tau(ws, ds.y, ds.a)
        rep = diagnostics.residual_independence_report(ws, ds.y, ds.a, tau)
        _write_json(outdir / "diagnostics.json", {"dr_diagnostics": rep.to_dict()})
    return 0


def cmd_simulate(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    setting = None
    if args.study == "single_covariate":
        setting = simulate.SINGLE_COVARIATE_SETTINGS[args.setting - 1]
    spec = simulate.StudySpec(
        study=args.study,
        setting=setting,
        n=args.n,
        n_replicates=args.replicates,
        seed=args.seed,
        estimators=tuple(args.estimators.split(",")) if args.estimators else None,
        workers=args.workers,
    )
    if args.desk_scale:
        spec = spec.desk_scale()
    records, metrics = simulate.run_study(spec)
    frame = pd.DataFrame([asdict(r) for r in records])
    frame.to_csv(outdir / "replicates.csv", index=False, float_format="%.10g")
    _write_json(
        outdir / "metrics.json",
        {
            "study": spec.study,
            "setting": list(spec.setting) if spec.setting else None,
            "n": spec.n,
            "n_replicates": spec.n_replicates,
            "seed": spec.seed,
            "metrics": metrics,
        },
    )
    return 0


def cmd_matched(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    frame = pd.read_csv(args.dataset)
    for col in (args.outcome, args.treatment, args.block):
        if col not in frame.columns:
            raise DataError(f"column {col!r} not in {args.dataset}")
    y = frame[args.outcome].to_numpy(dtype=float)
    a = frame[args.treatment].to_numpy(dtype=float)
    labels = frame[args.block].to_numpy()
    _, labels = np.unique(labels, return_inverse=True)
    ms = matched.MatchingStructure(block_of=labels)
    est = matched.weighted_sum_estimate(y, a, ms, args.sigma02)
    payload = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(est).items()}
    payload["sigma02"] = args.sigma02
    _write_json(outdir / "matched.json", payload)
    return 0


def cmd_diagnose(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ds, report = load_csv(args.dataset, _roles_from_args(args))
    if ds.q == 0:
        raise ConfigError("diagnose requires at least one kernel covariate")
    v_std, *_ = standardize_columns(ds.v)
    phi = np.array([float(p) for p in args.phi.split(",")])
    if phi.size != v_std.shape[1]:
        raise ConfigError(
            f"need {v_std.shape[1]} length scales after dropping constants, got {phi.size}"
        )
    params = KernelParams(sigma_f2=args.sigma_f2, phi=phi, sigma_02=args.sigma_02)
    ws = diagnostics.weight_matrix(v_std, params, ds.y, ds.a)
    tau = args.tau if args.tau is not None else diagnostics.solve_tau(ws, ds.y, ds.a)
    rep = diagnostics.residual_independence_report(ws, ds.y, ds.a, tau)
    _write_json(
        outdir / "diagnostics.json",
        {"dr_diagnostics": rep.to_dict(), "data_report": report},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpmatch",
        description="GP-covariance matching estimators for causal inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_roles(p):
        p.add_argument("--dataset", required=True, help="input CSV with a header row")
        p.add_argument("--outcome", required=True)
        p.add_argument("--treatment", required=True)
        p.add_argument("--mean-covariates", default="", help="comma-separated columns")
        p.add_argument("--kernel-covariates", default="", help="comma-separated columns")

    pa = sub.add_parser("analyze", help="fit the model to a dataset")
    add_roles(pa)
    pa.add_argument("--burnin", type=int, default=5000)
    pa.add_argument("--keep", type=int, default=5000)
    pa.add_argument("--seed", type=int, required=True)
    pa.add_argument("--treatment-only-mean", action="store_true")
    pa.add_argument("--no-interactions", action="store_true")
    pa.add_argument("--outdir", required=True)
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="run one benchmark study")
    ps.add_argument("--study", choices=simulate.STUDIES, required=True)
    ps.add_argument("--setting", type=int, default=1, help="single_covariate setting 1-4")
    ps.add_argument("--n", type=int, default=400)
    ps.add_argument("--replicates", type=int, default=100)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--estimators", default="", help="comma-separated estimator names")
    ps.add_argument("--desk-scale", action="store_true")
    ps.add_argument(
        "--workers",
        type=int,
        default=int(os.environ.get("GPMATCH_WORKERS", "1")),
    )
    ps.add_argument("--outdir", required=True)
    ps.set_defaults(func=cmd_simulate)

    pm = sub.add_parser("matched", help="closed-form estimate for a known block structure")
    pm.add_argument("--dataset", required=True)
    pm.add_argument("--outcome", required=True)
    pm.add_argument("--treatment", required=True)
    pm.add_argument("--block", required=True, help="block-label column")
    pm.add_argument("--sigma02", type=float, default=0.0)
    pm.add_argument("--outdir", required=True)
    pm.set_defaults(func=cmd_matched)

    pd_ = sub.add_parser("diagnose", help="doubly robust residual diagnostics")
    add_roles(pd_)
    pd_.add_argument("--sigma-f2", type=float, required=True)
    pd_.add_argument("--phi", required=True, help="comma-separated length scales")
    pd_.add_argument("--sigma-02", type=float, required=True)
    pd_.add_argument("--tau", type=float, default=None)
    pd_.add_argument("--outdir", required=True)
    pd_.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(json.dumps({"error": "numerical", "message": str(exc)}), file=sys.stderr)
        return 3
    except (ConfigError, GpmatchError) as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
