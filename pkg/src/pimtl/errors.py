"""Exception hierarchy shared across the package."""


class PimtlError(Exception):
    """Base class for all package errors."""


class DimensionError(PimtlError, ValueError):
    """Array shapes do not agree."""


class DomainError(PimtlError, ValueError):
    """An argument lies outside the domain of the operation."""


class DataError(PimtlError):
    """Input data is missing, malformed, or too short."""


class IngestionError(DataError):
    """A price file could not be parsed or validated."""


class InsufficientDataError(DataError):
    """Not enough history or buffered transitions for the request."""


class NumericError(PimtlError, ArithmeticError):
    """A computation produced a non-finite value or failed to converge."""


class ConfigError(PimtlError, ValueError):
    """Invalid or unknown configuration value."""
