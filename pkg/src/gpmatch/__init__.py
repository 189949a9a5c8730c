"""Bayesian causal inference with a GP covariance used as a matching tool."""

from .kernels import (
    CompoundSymmetryBlock,
    KernelParams,
    block_inverse,
    build_covariance,
    chol_solve,
    se_kernel,
)
from .model import Dataset, ModelSpec, PriorConfig, build_design, sigma_lm2_anchor
from .sampler import AteEstimate, McmcConfig, PosteriorChain, run_chain, summarize
from .matched import GlsEstimate, MatchingStructure, gls_estimate, stratified_lambda, weighted_sum_estimate
from .diagnostics import WeightSpace, psi, residual_independence_report, solve_tau, weight_matrix
from .simulate import StudySpec, gen_kang_schafer, gen_study1, gen_study2, run_study

__version__ = "0.1.0"
