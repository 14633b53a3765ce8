"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class KPNError(Exception):
    """Base class for all errors raised by kpnet."""


class ShapeError(KPNError, ValueError):
    """Tensor or layer shapes do not line up."""


class ConfigError(KPNError, ValueError):
    """An architecture, hyperparameter or run configuration is invalid."""


class DataError(KPNError, ValueError):
    """Input data could not be read or is inconsistent."""


class MagicError(DataError):
    """IDX magic number does not match the expected container type."""


class TruncatedError(DataError):
    """IDX file ends before its header or payload is complete."""


class CountMismatchError(DataError):
    """Image and label files disagree on the number of items."""


class NumericError(KPNError, ArithmeticError):
    """A loss or parameter became NaN or infinite."""
