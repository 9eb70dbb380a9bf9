"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, InternalError -> 4.
"""


class GipadError(Exception):
    """Base class for all package errors."""


class ConfigError(GipadError):
    """Invalid configuration, incompatible shapes, or violated preconditions."""


class DataError(GipadError):
    """Missing, malformed, or inconsistent input data."""


class InternalError(GipadError):
    """An internal invariant was violated; indicates a bug, not bad input."""


class UndefinedMetricError(DataError):
    """A metric or statistic has no defined value for the given inputs."""
