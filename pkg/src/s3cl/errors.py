"""Exception types shared across the package.

The CLI maps these onto process exit codes (data 3, numerical 4, config 5);
library callers can catch them individually.
"""


class S3CLError(Exception):
    """Base class for all package-specific errors."""


class DataError(S3CLError):
    """Malformed input files, out-of-range indices, or corrupt containers."""


class NumericalError(S3CLError):
    """Non-finite values or broken numerical contracts encountered at runtime."""


class ConfigError(S3CLError):
    """Invalid hyperparameter or configuration values."""
