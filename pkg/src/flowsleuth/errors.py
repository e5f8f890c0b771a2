"""Exception types shared across the toolkit."""


class FlowSleuthError(Exception):
    """Base class for all flowsleuth errors."""


# --- corpus / manifest ---------------------------------------------------

class MissingFile(FlowSleuthError):
    pass


class ParseError(FlowSleuthError):
    """Manifest text that cannot be parsed; carries line and column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class DuplicateId(FlowSleuthError):
    pass


class SplitLeak(FlowSleuthError):
    """The same video id appears in more than one split."""


class InvalidManifest(FlowSleuthError):
    """Manifest parsed but failed validation (e.g. frame counts off)."""


class DecodeError(FlowSleuthError):
    pass


class InconsistentDimensions(FlowSleuthError):
    pass


class EmptySequence(FlowSleuthError):
    pass


class IoError(FlowSleuthError):
    """Corpus files could not be written."""


# --- flow estimation and .flo files --------------------------------------

class DimensionMismatch(FlowSleuthError):
    pass


class SequenceTooShort(FlowSleuthError):
    pass


class BadMagic(FlowSleuthError):
    pass


class TruncatedFile(FlowSleuthError):
    pass


class OversizeDimensions(FlowSleuthError):
    pass


# --- residuals ------------------------------------------------------------

class TooFewFlows(FlowSleuthError):
    pass


# --- model ----------------------------------------------------------------

class InvalidConfig(FlowSleuthError):
    pass


class ModalityMismatch(FlowSleuthError):
    pass


class ShapeMismatch(FlowSleuthError):
    pass


class EmptyBatch(FlowSleuthError):
    pass


class EmptyList(FlowSleuthError):
    pass


# --- training -------------------------------------------------------------

class EmptySplit(FlowSleuthError):
    pass


class CorruptCheckpoint(FlowSleuthError):
    pass


class VersionMismatch(FlowSleuthError):
    pass


# --- evaluation -----------------------------------------------------------

class EmptyInput(FlowSleuthError):
    pass


class SingleClass(FlowSleuthError):
    pass


class InvalidWeights(FlowSleuthError):
    pass
