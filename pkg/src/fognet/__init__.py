"""Fog-robust two-stream video action recognition on a numpy autodiff core."""

from .errors import ConfigError, DegenerateInputError, DimensionError, EvaluationError, ParameterError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "DimensionError",
    "EvaluationError",
    "ParameterError",
]
