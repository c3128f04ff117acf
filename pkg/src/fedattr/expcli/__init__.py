"""Experiment configuration, orchestration, reporting, and plotting."""

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import ExperimentReport, run_experiment, select_malicious, sweep

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "run_experiment",
    "select_malicious",
    "sweep",
]
