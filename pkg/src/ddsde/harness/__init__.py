"""Configuration, experiment drivers, reports and the command line."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import (ExperimentResult, run_bounds_table, run_density_propagation,
                          run_mfl_sweep, run_stability, run_tanaka_check)
from .report import write_report

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "load_config", "parse_config",
    "run_bounds_table", "run_density_propagation", "run_mfl_sweep", "run_stability",
    "run_tanaka_check", "write_report",
]
