"""Exception types shared across the package.

The CLI maps these onto exit codes (config 2, numeric 3, precondition 4),
so library code should raise the most specific type that applies.
"""


class FlowPruneError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowPruneError):
    """Invalid or malformed run configuration."""


class NumericError(FlowPruneError):
    """Numeric failure: non-finite values, failed decomposition, NaN loss."""


class DegenerateDistributionError(NumericError):
    """Outputs have zero variance; entropy is undefined."""

    def __init__(self, message: str = "degenerate distribution: zero output variance"):
        super().__init__(message)


class PreconditionError(FlowPruneError):
    """An operation was called outside its documented preconditions."""
