"""Exception hierarchy. The CLI maps these onto its exit codes."""


class RecourseError(Exception):
    """Base class for all package errors."""


class ConfigError(RecourseError, ValueError):
    """Invalid configuration or request parameters."""


class DataError(RecourseError, ValueError):
    """Malformed, inconsistent or missing input data."""


class NumericalError(RecourseError, ArithmeticError):
    """The optimizer produced a non-finite value."""
