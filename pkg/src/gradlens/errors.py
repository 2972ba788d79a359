"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """An array has the wrong shape for the requested operation."""


class NonFiniteError(ValueError):
    """An array contains NaN or infinity where finite values are required."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class ChecksumMismatch(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class ZeroMassGrid(ValueError):
    """A grid with no positive mass was passed where mass is required."""
