"""Solvers and diagnostics for the Cahn-Hilliard reaction model."""

from chrflow.errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    MonotonicityError,
    RateRangeError,
)
from chrflow.mesh import Field, Grid, boundary_integrate, build_grid, integrate

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "Field",
    "Grid",
    "MonotonicityError",
    "RateRangeError",
    "boundary_integrate",
    "build_grid",
    "integrate",
]

__version__ = "0.1.0"
