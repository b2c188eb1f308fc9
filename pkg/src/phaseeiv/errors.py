"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class PhaseEIVError(Exception):
    """Base class for all errors raised by phaseeiv."""


class DomainError(PhaseEIVError, ValueError):
    """Input outside the domain of an operation (shape mismatch, bad value)."""


class NumericalError(PhaseEIVError, ArithmeticError):
    """A numerical evaluation produced a non-finite or unusable value."""

    def __init__(self, message, *, node=None):
        super().__init__(message)
        self.node = node


class DegenerateFrequencyError(NumericalError):
    """An empirical characteristic function modulus fell below the floor."""

    def __init__(self, message, *, t=None, modulus=None):
        super().__init__(message, node=t)
        self.t = t
        self.modulus = modulus


class TStarSelectionError(PhaseEIVError):
    """No scan frequency brought the outcome ECF modulus below the threshold."""

    def __init__(self, message, *, t_max, min_modulus):
        super().__init__(message)
        self.t_max = t_max
        self.min_modulus = min_modulus


class ResourceError(PhaseEIVError):
    """A request exceeds a hard resource cap (e.g. O(n^4) evaluation)."""


class ConvergenceError(PhaseEIVError):
    """Every local search failed to converge."""

    def __init__(self, message, *, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class InferenceError(PhaseEIVError):
    """Covariance estimation could not be completed."""


class UnsupportedError(PhaseEIVError, NotImplementedError):
    """Requested configuration is recognised but not implemented."""


class DataError(PhaseEIVError):
    """A dataset is unusable for the requested transformation."""


class ParseError(DataError):
    """A CSV cell or file could not be parsed."""

    def __init__(self, message, *, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(PhaseEIVError):
    """A run configuration references missing columns or invalid values."""
