"""Simulation, sensitivity analysis, observability testing, and
sensitivity-based Kalman filtering for semi-explicit index-1 DAE systems,
smooth or nonsmooth."""

from .ldnum import LD, fsign, ld_abs, ld_max, ld_min
from .model import (
    DaeModel,
    augment_parameters,
    builtin_wind_turbine,
    consistent_init,
    eval_rhs,
    parse_model,
    serialize_model,
)

__all__ = [
    "LD",
    "fsign",
    "ld_min",
    "ld_max",
    "ld_abs",
    "DaeModel",
    "parse_model",
    "serialize_model",
    "builtin_wind_turbine",
    "augment_parameters",
    "consistent_init",
    "eval_rhs",
]

__version__ = "0.1.0"
