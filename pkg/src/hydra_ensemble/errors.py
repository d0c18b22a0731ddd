"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``NumericError`` -> 3.
"""


class HydraError(Exception):
    """Base class for all package errors."""


class ConfigError(HydraError, ValueError):
    """Invalid configuration, roster, plan or argument."""


class ShapeError(ConfigError):
    """Tensor or layer shapes do not line up."""


class DataError(HydraError, ValueError):
    """Malformed or inconsistent data files (manifests, CSVs, checkpoints)."""


class NumericError(HydraError, FloatingPointError):
    """A NaN or Inf appeared in a computation."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
