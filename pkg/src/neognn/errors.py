"""Exception types shared across the package.

The CLI maps each class to an exit code, so raise the most specific one.
"""


class NeoGNNError(Exception):
    """Base class for every error raised by this package."""


class DataError(NeoGNNError, ValueError):
    """Malformed or inconsistent input data (files, edge lists, splits)."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class NumericError(NeoGNNError, ArithmeticError):
    """Non-finite value produced during a forward or backward pass."""


class UndefinedMetricError(NeoGNNError, ValueError):
    """A statistic is mathematically undefined for the given input."""
