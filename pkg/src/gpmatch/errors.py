"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericalError -> 3,
ConfigError -> 4.
"""


class GpmatchError(Exception):
    """Base class for all package errors."""


class DataError(GpmatchError):
    """Invalid or malformed input data."""


class NumericalError(GpmatchError):
    """Linear-algebra failure (factorization, singular system)."""


class ConfigError(GpmatchError):
    """Invalid configuration or arguments."""
