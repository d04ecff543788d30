"""Exception hierarchy.

Every error raised on bad input derives from ``ValueError`` so callers that
only care about "invalid argument" can catch that.
"""


class GenFWERError(Exception):
    """Base class for all package errors."""


class ParameterError(GenFWERError, ValueError):
    """A parameter lies outside its admissible domain."""


class DimensionError(ParameterError):
    """Array or vector lengths do not agree."""


class IdentifierMismatchError(ParameterError):
    """An id is not part of the hypothesis family it is compared against."""


class InfeasibleConstructionError(ParameterError):
    """Parameters of an adversarial construction violate its feasibility condition."""


class DegenerateParameterError(ParameterError):
    """Parameters make a construction undefined (e.g. a division by zero)."""


class UnsupportedMethodError(ParameterError):
    """The requested operation is not defined for this method."""


class ConfigurationError(ParameterError):
    """An experiment or procedure specification is incomplete or inconsistent."""
