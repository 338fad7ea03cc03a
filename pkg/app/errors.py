"""Exception hierarchy shared by every module.

Each family carries the process exit code the CLI returns for it.
"""


class QReLULabError(Exception):
    """Base class for all errors raised by the lab."""

    exit_code: int = 1


class ConfigError(QReLULabError):
    """Raised when a run configuration cannot be parsed or validated."""

    exit_code = 2


class InvalidArgumentError(QReLULabError, ValueError):
    """Raised when an operation receives an argument outside its domain."""

    exit_code = 2


class DataError(QReLULabError):
    """Raised when a dataset cannot be read or is inconsistent."""

    exit_code = 3


class ShapeError(QReLULabError, ValueError):
    """Raised when tensor shapes disagree with what a kernel expects."""

    exit_code = 3


class StaleCacheError(ShapeError):
    """Raised when a forward cache no longer matches the network it came from."""


class BadMagicError(DataError):
    """Raised when an IDX file starts with an unexpected magic number."""


class TruncatedPayloadError(DataError):
    """Raised when an IDX payload is shorter than its header announces."""


class CountMismatchError(DataError):
    """Raised when the image and label files disagree on the sample count."""


class ImageDecodeError(DataError):
    """Raised when an image file cannot be decoded."""


class EmptyDatasetError(DataError):
    """Raised when a loader or the trainer ends up with no samples."""


class ClassMismatchError(DataError):
    """Raised when train and test data do not share class names."""


class StratificationError(DataError):
    """Raised when a class has too few samples for a stratified split."""


class LabelRangeError(DataError, ValueError):
    """Raised when a label falls outside [0, num_classes)."""


class NumericError(QReLULabError):
    """Raised on numerical failures during training or checking."""

    exit_code = 4


class NonFiniteLossError(NumericError):
    """Raised when the training loss becomes NaN or infinite."""


class PrecisionError(NumericError):
    """Raised when a check needs double precision but got single."""


class CheckpointError(QReLULabError):
    """Raised when a checkpoint cannot be written or read back."""

    exit_code = 5


class CheckpointVersionError(CheckpointError):
    """Raised when a checkpoint was written by an unsupported format version."""


class CheckpointCorruptError(CheckpointError):
    """Raised when a checkpoint is truncated or its manifest is inconsistent."""


__all__ = [
    "BadMagicError",
    "CheckpointCorruptError",
    "CheckpointError",
    "CheckpointVersionError",
    "ClassMismatchError",
    "ConfigError",
    "CountMismatchError",
    "DataError",
    "EmptyDatasetError",
    "ImageDecodeError",
    "InvalidArgumentError",
    "LabelRangeError",
    "NonFiniteLossError",
    "NumericError",
    "PrecisionError",
    "QReLULabError",
    "ShapeError",
    "StaleCacheError",
    "StratificationError",
    "TruncatedPayloadError",
]
