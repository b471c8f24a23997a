"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
SolverError -> 4.
"""


class MvmcError(Exception):
    """Base class for all package errors."""


class ConfigError(MvmcError, ValueError):
    pass


class DataError(MvmcError, ValueError):
    pass


class DimensionError(DataError):
    pass


class UndefinedMetricError(DataError):
    """A ranking metric was requested for a label with no positives (or one class)."""


class SolverError(MvmcError, RuntimeError):
    """Numerical failure inside an optimizer; ``stage`` names where it happened."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg
