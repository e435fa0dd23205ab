class NgoSimError(Exception):
    """Base class for every failure raised by ngosim."""


class InvalidSizeError(NgoSimError, ValueError):
    pass


class InvalidEdgeError(NgoSimError, ValueError):
    pass


class NotConnectedError(NgoSimError, ValueError):
    pass


class AsymmetricMatrixError(NgoSimError, ValueError):
    pass


class InvalidExponentError(NgoSimError, ValueError):
    pass


class ShapeError(NgoSimError, ValueError):
    pass


class BoundUndefinedError(NgoSimError, ValueError):
    pass


class NoDataError(NgoSimError, ValueError):
    pass


class OptimizerError(NgoSimError, RuntimeError):
    pass


class PartitionError(NgoSimError, RuntimeError):
    pass


class IncompleteTraceError(NgoSimError, ValueError):
    pass


class InvalidKError(NgoSimError, ValueError):
    pass


class ScheduleError(NgoSimError, ValueError):
    pass


class ConfigError(NgoSimError, ValueError):
    """Experiment config problem; `line` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)


class StabilityWarning(UserWarning):
    """A run proceeds outside the conditions its guarantees assume."""
