"""Configuration, run persistence, sweeps and reports."""

from .config import ConfigValidationError, ExperimentConfig, load_config, parse_config
from .runner import execute, run_dir_for
