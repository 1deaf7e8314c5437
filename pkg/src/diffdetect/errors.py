"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical-domain failures with 3.
"""


class DiffDetectError(Exception):
    """Base class for package errors."""


class ArgumentError(DiffDetectError, ValueError):
    """Bad shapes, dimensions or parameter values."""


class ConfigurationError(DiffDetectError):
    """A statistic, file or config is missing something it needs."""


class NumericalDomainError(DiffDetectError, ArithmeticError):
    """A computation produced a non-finite value."""


class CalibrationError(NumericalDomainError):
    """No positive rescaling satisfies the exponential-moment constraint."""
