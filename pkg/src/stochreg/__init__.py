"""Simulation and hybrid output regulation of linear stochastic systems."""

from .errors import (ConfigError, DesignFailure, GridMismatch, IntegrationBlowup, ModelError,
                     OffGridError, ResonanceError, UndefinedRelativeDegree,
                     UnsupportedConfiguration)
from .model import (Exosystem, GainSet, PlantModel, RelativeDegreeInfo, preset_circuit,
                    preset_scalar, stochastic_relative_degree, validate_exosystem,
                    validate_plant)
from .noise import BrownianPath, generate_path, increment_over
from .sim import HybridTrajectory, SimConfig, simulate_closed_loop

__version__ = "0.1.0"
