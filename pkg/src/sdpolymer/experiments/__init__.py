"""Configuration, orchestration, output writing and the command-line entry point."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runs import ExperimentResult, NumericalFailure

__all__ = ["ConfigError", "ExperimentConfig", "ExperimentResult", "NumericalFailure", "load_config", "parse_config"]
