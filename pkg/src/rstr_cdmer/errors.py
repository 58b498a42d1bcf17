"""Exception types for RSTR CDMER."""

from typing import Optional


class DimensionMismatchError(ValueError):
    """Raised when matrices or feature sets have inconsistent shapes."""


class KernelConfigMismatchError(ValueError):
    """Raised when test-time kernels are requested with a different kernel or basis."""


class ConfigError(ValueError):
    """Raised for invalid or unresolvable run configuration."""


class FeatureFileError(ValueError):
    """Raised when a feature file cannot be parsed.

    Args:
        message: Human readable description
        row: 1-based sample row (header is row 0) the error refers to, if any
    """

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DataError(ValueError):
    """Raised for input data that cannot be used: non-finite values, a file that is not a model artifact."""
