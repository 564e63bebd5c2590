"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A network spec, config, or shape is inconsistent before numerics run."""


class UsageError(ValueError):
    """An operation was called with arguments that violate its contract."""


class NumericError(ArithmeticError):
    """Non-finite values appeared during computation.

    ``where`` identifies the layer index, batch index, or training step
    at which the problem was detected.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class MaskError(ValueError):
    """All candidate tokens were masked out; nothing can be sampled."""


class EnumerationCapError(ValueError):
    """The discrete space is too large for exhaustive enumeration."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or has an unsupported version."""
