"""Exception types raised across the package."""


class LnsError(Exception):
    """Base class for all package errors."""


class DimensionError(LnsError, ValueError):
    pass


class InvalidActionError(LnsError, ValueError):
    pass


class PreconditionError(LnsError, ValueError):
    pass


class UnsupportedError(LnsError, ValueError):
    pass


class InvalidParameterError(LnsError, ValueError):
    pass


class ConsistencyError(LnsError, RuntimeError):
    """An internal invariant was violated."""


class GenerationError(LnsError, RuntimeError):
    pass


class NoInitialAssignmentError(LnsError, RuntimeError):
    pass


class TrainingError(LnsError, RuntimeError):
    pass


class CheckpointError(LnsError, ValueError):
    pass


class MissingInstanceError(LnsError, KeyError):
    pass


class MissingArtifactError(LnsError, FileNotFoundError):
    """An upstream file a command depends on does not exist."""
