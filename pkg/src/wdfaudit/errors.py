"""Exception types raised across the package."""


class WdfError(Exception):
    """Base class for all package errors."""


class DataError(WdfError, ValueError):
    pass


class GroupMassError(DataError):
    """A fairness cell has zero empirical mass."""


class TrainingError(WdfError):
    pass


class UnsupportedModelError(WdfError):
    pass


class ConvergenceError(WdfError):
    pass


class NotApplicableError(WdfError):
    """A bound's hypotheses (margin sign, regime) do not hold."""


class OutOfRegimeError(NotApplicableError):
    pass
