"""
Exception types raised across thermask.

Library code raises these; the command-line layer maps them to exit codes.
"""


class ThermaskError(Exception):
    """Base class for every error raised by thermask."""


class ShapeError(ThermaskError, ValueError):
    """Operand shapes do not agree."""


class GradientError(ThermaskError):
    """Backward pass cannot run, or produced unusable gradients."""


class NonDeterministicError(ThermaskError):
    """A function expected to be deterministic returned different values."""


class SpectralResidueError(ThermaskError):
    """Inverse FFT left an imaginary part too large to discard."""


class ImageReadError(ThermaskError, OSError):
    """An image file could not be opened or decoded."""


class ImageFormatError(ThermaskError, ValueError):
    """An image file uses a layout or bit depth we do not read."""


class DegenerateImageError(ThermaskError, ValueError):
    """An image has no content left to keep."""


class PreconditionError(ThermaskError, ValueError):
    """An argument violates a documented precondition."""


class MaskMismatchError(ThermaskError, ValueError):
    """A mask selection does not belong to the token grid it is applied to."""


class EmptyCorpusError(ThermaskError):
    """A corpus has no usable images."""


class CheckpointError(ThermaskError):
    """A checkpoint or feature grid file is malformed."""


class ConfigError(ThermaskError):
    """A configuration file or value is invalid."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
