"""mfosc: mean-field coupled diffusions tracking a limit cycle.

Simulates N linearly-coupled diffusions with a weak bounded drift, solves
the spectral limit dynamics of density and mean, and measures how the
ensemble's phase wanders: a Brownian motion with constant drift on the
timescale N*t, estimated with uncertainty and checked against a
finite-dimensional oracle.
"""

from .config import PACKAGE_VERSION as __version__
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    IntegrationError,
    MfoscError,
    NoCycleError,
    OutOfBasinError,
    ResolutionError,
    StatisticsError,
    TruncationError,
)
from .model import DiagonalMatrix, DiffusionModel, VectorFieldSpec, default_model

__all__ = [
    "__version__",
    "DiagonalMatrix",
    "DiffusionModel",
    "VectorFieldSpec",
    "default_model",
    "MfoscError",
    "ConfigurationError",
    "DomainError",
    "NoCycleError",
    "ConvergenceError",
    "IntegrationError",
    "OutOfBasinError",
    "StatisticsError",
    "TruncationError",
    "ResolutionError",
]
