"""Exception types raised across the package."""


class IgSelectError(Exception):
    pass


class SpecificationError(IgSelectError, ValueError):
    """Arguments violate an operation's preconditions."""


class ShapeError(IgSelectError, ValueError):
    pass


class EncodingError(IgSelectError, KeyError):
    pass


class TrainingError(IgSelectError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None, loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class AttributionError(IgSelectError, RuntimeError):
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class ClusteringError(IgSelectError, ValueError):
    pass


class SurrogateError(IgSelectError, RuntimeError):
    pass


class ConfigError(IgSelectError, ValueError):
    pass


class StageError(IgSelectError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
