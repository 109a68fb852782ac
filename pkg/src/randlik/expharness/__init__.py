"""Config-driven convergence experiments, CSV output and the verify suite."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .records import ConvergenceRecord, RateFit, fit_rate, format_csv, read_csv, write_csv
from .runner import ExperimentError, build_problem, run_experiment

__all__ = [
    "ConfigError",
    "ConvergenceRecord",
    "ExperimentConfig",
    "ExperimentError",
    "RateFit",
    "build_problem",
    "fit_rate",
    "format_csv",
    "load_config",
    "parse_config",
    "read_csv",
    "run_experiment",
    "write_csv",
]
