"""Exception types raised across the package."""


class AdLeakError(Exception):
    """Base class for all package errors."""


class DimensionError(AdLeakError, ValueError):
    """Feature vectors or distributions of different lengths were combined."""


class ModelError(AdLeakError, ValueError):
    """An input violates a model invariant (negative mass, non-PSD correlation, ...)."""


class CapacityError(AdLeakError, ValueError):
    """The request exceeds what exact enumeration supports."""


class ConfigurationError(AdLeakError, ValueError):
    """Invalid or inconsistent parameters."""


class UsageError(AdLeakError, RuntimeError):
    """An operation was called in a state that does not allow it."""


class UndefinedBoundsError(AdLeakError, ValueError):
    """Hellinger distance is zero, so sample-complexity bounds are undefined."""


class DegenerateInstanceError(AdLeakError, ValueError):
    """The expansion factor is undefined for this instance (A = 0)."""


class UndefinedSampleComplexityError(AdLeakError, ValueError):
    """The two distributions are (numerically) identical."""


class CeilingError(AdLeakError, RuntimeError):
    """Sample-complexity search exceeded its campaign-size ceiling."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class InfeasibleSecretError(AdLeakError, ValueError):
    """A secret has zero probability under every candidate distribution."""


class ParseError(ConfigurationError):
    """A results file is malformed; the message names the offending line."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
