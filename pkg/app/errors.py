"""Error hierarchy shared by the library and the command-line surface."""
from typing import Optional

# Error categories (mapped to exit codes by the CLI)
CATEGORY_CONFIG = "config"
CATEGORY_NUMERIC = "numeric"
CATEGORY_IO = "io"


class EstimationError(Exception):
    category = CATEGORY_NUMERIC


class ConfigError(EstimationError):
    category = CATEGORY_CONFIG


class NumericError(EstimationError):
    category = CATEGORY_NUMERIC


class MatrixConditioningError(NumericError):
    """A matrix that must be symmetric positive definite is not (numerically)."""


class InconsistentObservationError(NumericError):
    """A censored output that matches neither censoring level lies outside [l, u]."""


class StepError(NumericError):
    def __init__(self, step: int, cause: BaseException):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")


class ReplicationError(NumericError):
    def __init__(self, replication: int, cause: BaseException):
        self.replication = replication
        self.cause = cause
        step: Optional[int] = getattr(cause, "step", None)
        where = f"replication {replication}" + (f", step {step}" if step is not None else "")
        super().__init__(f"{where}: {getattr(cause, 'cause', cause)}")


class ExperimentFailedError(NumericError):
    pass


class OutputError(EstimationError):
    category = CATEGORY_IO


class DegradedGainWarning(RuntimeWarning):
    """The Step-1 worst-case gain underflowed; the preliminary estimate stalls."""
