"""Command line interface of aggne."""

# flake8: noqa

from aggne.cli.config import ExperimentConfig, config_hash, emit_config, parse_config
from aggne.cli.runner import main, run_experiment
