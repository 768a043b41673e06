"""Configuration, Monte Carlo estimators, experiments and the command-line entry point."""

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config, parse_config
from .estimators import (
    EstimateRecord,
    NumericFailure,
    estimate_wc_sq,
    estimate_wm_sq,
    run_cancellation_scan,
)
from .experiments import execute, run_experiment

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "EstimateRecord",
    "ExperimentConfig",
    "NumericFailure",
    "estimate_wc_sq",
    "estimate_wm_sq",
    "execute",
    "load_config",
    "parse_config",
    "run_cancellation_scan",
    "run_experiment",
]
