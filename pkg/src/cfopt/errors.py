"""Exception types shared across the package."""


class CfoptError(Exception):
    """Base class for all package errors."""


class InputError(CfoptError, ValueError):
    """Raised on shape mismatches and invalid arguments."""


class NumericError(CfoptError, ArithmeticError):
    """Raised when a computation meets or produces non-finite values."""


class CapacityError(CfoptError):
    """Raised when an enumeration would exceed its size guard."""


class UndefinedMetricError(CfoptError, ArithmeticError):
    """Raised when a metric is undefined, e.g. a zero denominator."""


class TrainingError(CfoptError, RuntimeError):
    """Raised when training diverges.

    The ``epoch`` attribute holds the index of the failing epoch.
    """

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
