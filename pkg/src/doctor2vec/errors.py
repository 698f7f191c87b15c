"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class ValidationError(ValueError):
    """Input data is malformed or outside the accepted domain."""


class CalibrationError(RuntimeError):
    """The synthetic generator could not hit its target label distribution."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class CheckpointError(RuntimeError):
    """A checkpoint file could not be loaded."""
