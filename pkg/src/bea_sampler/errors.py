"""Exception types raised across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain of the function being evaluated."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SolverDivergenceError(RuntimeError):
    """A sampler produced a non-finite state.

    The trajectories recorded up to the failure are kept on ``partial``.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class CalibrationError(RuntimeError):
    def __init__(self, message: str, k_range: tuple[int, int] | None = None):
        super().__init__(message)
        self.k_range = k_range


class ScheduleInstabilityError(RuntimeError):
    def __init__(self, message: str, length_histogram: dict[int, int] | None = None):
        super().__init__(message)
        self.length_histogram = length_histogram or {}


class ScheduleFormatError(ValueError):
    """A schedule file could not be parsed or failed validation."""
