"""Diffusion-path sequential Monte Carlo samplers for unnormalized densities."""

from .estimation import build_cv, estimate_score_cov, estimate_scores
from .metrics import predictive_loglik, score_mse_experiment, sinkhorn_w2, sliced_ks
from .path import CvSchedule, DiffusionPath, cosine_lambda, select_T, sigma_from_target
from .samplers import ConfigError, RunConfig, RunResult, SamplerError, run, run_ais, run_dpsmc, run_dpsmc_tempered, run_smc_geometric
from .targets import TARGETS, load_dataset

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CvSchedule",
    "DiffusionPath",
    "RunConfig",
    "RunResult",
    "SamplerError",
    "TARGETS",
    "build_cv",
    "cosine_lambda",
    "estimate_score_cov",
    "estimate_scores",
    "load_dataset",
    "predictive_loglik",
    "run",
    "run_ais",
    "run_dpsmc",
    "run_dpsmc_tempered",
    "run_smc_geometric",
    "score_mse_experiment",
    "select_T",
    "sigma_from_target",
    "sinkhorn_w2",
    "sliced_ks",
]
