"""Exception hierarchy shared by all simulator modules.

The CLI maps these onto distinct process exit codes (see cli module):
validation problems, calibration failures, and runtime/solver failures
are reported separately.
"""


class SimError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SimError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ValidationError(SimError, ValueError):
    """A scenario document or object graph violates the schema/invariants."""


class CalibrationError(SimError):
    """The profile calibration solver failed to satisfy an anchor."""


class NoSolutionError(SimError):
    """A root-finding request has no solution in the searched domain."""


class InsufficientDataError(SimError):
    """The coordinator lacks the link reports needed to decide a pair."""


class PairUnreachableError(SimError):
    """No communication mode (direct, relayed, cellular) is viable for a pair."""
