"""Exception types shared across the package."""


class MvirError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MvirError):
    """Tensor shapes do not line up for the requested operation."""


class ConfigurationError(MvirError):
    """A structural parameter (kernel width, dilation, head count...) is invalid."""


class UsageError(MvirError):
    """An operation was called outside its contract (empty input, non-scalar loss...)."""


class FixtureFormatError(MvirError):
    """A feature fixture file is malformed.

    Carries the byte offset at which decoding failed so truncation and
    corruption are distinguishable from each other.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointError(MvirError):
    """A parameter checkpoint is malformed or does not match the config."""


class ConfigValidationError(MvirError):
    """A run config violates its schema.

    ``problems`` lists every violated field at once so a config can be fixed
    in one pass.
    """

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class OptimizerError(MvirError):
    """An optimizer step was aborted (non-finite gradients)."""
