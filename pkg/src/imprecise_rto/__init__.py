"""Robust topology optimization under imprecise Gaussian random-field loads."""
from .bounds import MomentBounds, ca_bounds, monotonicity_report, pso_bounds, qmcs_bounds
from .config import RunConfig, load_config, parse_config
from .errors import (ConfigError, DegenerateVarianceError, InvalidInputError, NumericalError,
                     PreconditionViolation, RTOError, StructuralError)
from .optimizer import run_rto
from .random_field import PBox, pbox_from_samples, pbox_from_stats

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateVarianceError", "InvalidInputError", "MomentBounds",
    "NumericalError", "PBox", "PreconditionViolation", "RTOError", "RunConfig",
    "StructuralError", "ca_bounds", "load_config", "monotonicity_report", "parse_config",
    "pbox_from_samples", "pbox_from_stats", "pso_bounds", "qmcs_bounds", "run_rto",
]
