"""Exception hierarchy shared by every stage of the toolkit."""


class EegError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ConfigError(EegError):
    pass


class DataError(EegError):
    """Problems with input data (files, recordings, samples)."""


class MissingChannel(DataError):
    pass


class EmptyFile(DataError):
    pass


class ParseError(DataError):
    pass


class RecordingNotFound(DataError, FileNotFoundError):
    pass


class AllRowsCorrupt(DataError):
    pass


class InvalidSpec(DataError):
    pass


class InvalidFilterSpec(DataError):
    pass


class NumericalInstability(DataError):
    pass


class ZeroVariance(DataError):
    pass


class BadParams(DataError):
    pass


class MissingClass(DataError):
    pass


class TooFewSamples(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoWindows(DataError):
    pass


class ModelError(EegError):
    pass


class ShapeMismatch(ModelError, ValueError):
    pass


class BadRate(ModelError, ValueError):
    pass


class NonScalarLoss(ModelError, ValueError):
    pass


class BadArch(ModelError, ValueError):
    pass


class CheckpointError(EegError):
    pass


class FormatVersionMismatch(CheckpointError):
    pass


class ShapeCorruption(CheckpointError):
    pass


class ArchMismatch(CheckpointError):
    pass


class OutputLocked(EegError):
    """Another command holds the output directory."""
