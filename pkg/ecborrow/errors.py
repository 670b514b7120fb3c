"""
Error hierarchy shared across ecborrow.

Every domain failure derives from EcBorrowError. Module-specific
exceptions live next to the code that raises them and subclass one of
the family roots below.
"""

from __future__ import annotations


class EcBorrowError(Exception):
    """Root of all ecborrow errors."""
    pass


class DatasetError(EcBorrowError):
    """A dataset violates its layout contract."""
    pass


class ShapeMismatchError(DatasetError):
    """Column counts or vector lengths disagree."""
    pass


class ArmMissingError(DatasetError):
    """A treatment arm needed by the computation has no rows."""
    pass


class ModelError(EcBorrowError):
    """A model could not be fitted or evaluated."""
    pass


class SelectionError(EcBorrowError):
    """Borrowing-subset construction or selection failed."""
    pass


class CalibrationError(EcBorrowError):
    """Outcome calibration could not be performed."""
    pass


class SimulationError(EcBorrowError):
    """A data-generating mechanism was misused."""
    pass


class ConfigError(EcBorrowError):
    """An analysis setting is out of range or malformed."""
    pass


class PipelineStageError(EcBorrowError):
    """Wraps a failure raised inside a named analysis stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
