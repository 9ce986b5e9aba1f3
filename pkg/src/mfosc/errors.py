"""Exception hierarchy shared across the toolchain.

The CLI maps these onto its exit-code contract, so new failure modes
should subclass one of the four code-bearing roots below.
"""

from __future__ import annotations


class MfoscError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MfoscError):
    """Invalid or inconsistent configuration (exit code 1).

    ``key_path`` names the offending config entry when known.
    """

    def __init__(self, message: str, key_path: str | None = None):
        self.key_path = key_path
        if key_path:
            message = f"[{key_path}] {message}"
        super().__init__(message)


class DomainError(MfoscError):
    """Evaluation requested outside a function's domain (non-finite input)."""


class NoCycleError(MfoscError):
    """No periodic orbit found (exit code 2)."""


class ConvergenceError(MfoscError):
    """An iterative solver failed to converge.

    Carries the residual history so callers can distinguish divergence
    from slow convergence.
    """

    def __init__(self, message: str, residuals=None):
        self.residuals = list(residuals) if residuals is not None else []
        super().__init__(message)


class IntegrationError(MfoscError):
    """Time integration produced a non-finite state."""

    def __init__(self, message: str, step_index: int | None = None):
        self.step_index = step_index
        if step_index is not None:
            message = f"{message} (step {step_index})"
        super().__init__(message)


class OutOfBasinError(MfoscError):
    """State left the isochron tube / basin of attraction."""


class StatisticsError(MfoscError):
    """Not enough valid data for a statistical estimate (exit code 3)."""


class TruncationError(MfoscError):
    """Spectral truncation too small for the requested quantity (exit code 4)."""


class ResolutionError(TruncationError):
    """Galerkin resolution insufficient (aliasing); shares exit code 4."""
