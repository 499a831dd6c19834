"""Exception types shared across the toolkit.

The CLI maps these onto exit statuses: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(Exception):
    """Invalid configuration or usage."""


class DataError(Exception):
    """Malformed or inconsistent input data."""


class NumericError(Exception):
    """Non-finite values or a failed numeric check."""


class GraphError(Exception):
    """Ill-formed computation graph (shape mismatch, bad operand)."""
