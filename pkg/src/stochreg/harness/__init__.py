"""Experiment configs, sweeps, metrics and figure presets."""

from .config import ExperimentConfig, config_from_dict, load_config
from .metrics import MetricsRow, steady_state_rms
from .run import execute, figure_config, reproduce, run
