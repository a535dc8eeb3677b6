"""Exception hierarchy shared by every package in the repo"""


class TvsrError(Exception):
    """Base class for all errors raised by this project"""


class ShapeError(TvsrError, ValueError):
    """Tensor or volume extents do not fit the requested operation"""


class NonFiniteError(TvsrError, ArithmeticError):
    """An operation produced NaN or Inf values"""


class ValidationError(TvsrError, ValueError):
    """Configuration or user input failed validation"""


class VolumeFormatError(TvsrError):
    """A volume file is malformed"""


class CheckpointError(TvsrError):
    """A checkpoint file is malformed or does not match the model"""


class TrainingDivergedError(TvsrError):
    """The training loss became non-finite"""

    def __init__(self, step, provenance, loss):
        """
        Initialize the error

        Args:
            step: Index of the failing step
            provenance: Provenance record of the patch used at that step
            loss: The offending loss value
        """
        super().__init__(f"non-finite loss {loss!r} at step {step} (patch: {provenance})")
        self.step = step
        self.provenance = provenance
        self.loss = loss
