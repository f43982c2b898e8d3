"""Exceptions raised by the separation engine."""


class DimensionError(ValueError):
    """Tensor shapes do not agree."""


class FullyMaskedRowError(ValueError):
    """A softmax row has no finite entry."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class AttentionModeError(ValueError):
    """Operation not available for the model attention mode."""


class CheckpointError(RuntimeError):
    """Malformed checkpoint file."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class AudioIOError(IOError):
    pass


class NonFiniteLossError(RuntimeError):
    """Loss evaluated to NaN or infinity."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
