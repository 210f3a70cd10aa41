"""Shared exception hierarchy for the fsr toolkit."""


class FsrError(Exception):
    """Base class for all fsr errors."""


# --- depth I/O ---

class MalformedHeaderError(FsrError):
    pass


class WrongMaxvalError(FsrError):
    pass


class TruncatedDataError(FsrError):
    pass


class UnknownLabelError(FsrError):
    pass


class DuplicatePathError(FsrError):
    pass


class MalformedRowError(FsrError):
    pass


# --- segmentation ---

class NoValidDepthError(FsrError):
    pass


class ComponentTooSmallError(FsrError):
    pass


class EmptyMaskError(FsrError):
    pass


# --- preprocessing ---

class DimensionMismatchError(FsrError):
    pass


class BoxOutOfBoundsError(FsrError):
    pass


class EmptySetError(FsrError):
    pass


# --- network ---

class ShapeError(FsrError):
    pass


class SpecError(FsrError):
    pass


class LabelOutOfRangeError(FsrError):
    pass


class StaleCacheError(FsrError):
    pass


class BadMagicError(FsrError):
    pass


class VersionMismatchError(FsrError):
    pass


class SizeMismatchError(FsrError):
    pass


# --- training ---

class EmptyPartitionError(FsrError):
    pass


class UnknownSubjectError(FsrError):
    pass


class IncompatibleWeightsError(FsrError):
    pass
