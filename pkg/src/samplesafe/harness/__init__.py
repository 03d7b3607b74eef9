"""Configuration, experiment recipes, metrics and the command-line interface."""

from .config import ExperimentConfig, load_config, parse_config
from .scenarios import run_experiment

__all__ = ["ExperimentConfig", "load_config", "parse_config", "run_experiment"]
