"""Exception types shared across the toolchain."""


class AirmarkError(Exception):
    """Base class for all errors raised by this package."""


class MalformedHeader(AirmarkError):
    """Image file header is not a valid binary PPM/PGM header."""


class TruncatedPayload(AirmarkError):
    """Binary payload is shorter than the header promises."""


class ZeroDimension(AirmarkError):
    """A requested output dimension is smaller than one pixel."""


class ShapeMismatch(AirmarkError):
    """Tensor shapes do not agree for the requested operation."""


class MissingCache(AirmarkError):
    """Backward pass invoked without cached forward activations."""


class NoHorizon(AirmarkError):
    """Image is too uniform to locate a horizon row."""


class DegenerateCrop(AirmarkError):
    """Cropping below the horizon would leave too few rows."""


class InvalidTrapezoid(AirmarkError):
    """Trapezoid is degenerate, self-intersecting, or out of bounds."""


class DimensionMismatch(AirmarkError):
    """Image and mask dimensions differ."""


class SeedNotForeground(AirmarkError):
    """Traversal seed does not lie on mask foreground."""


class OutOfBounds(AirmarkError):
    """Coordinates fall outside the frame."""


class TooFewItems(AirmarkError):
    """Dataset too small to split."""


class InputTooSmall(AirmarkError):
    """Network input too small for the layer stack."""


class DecodeFailure(AirmarkError):
    """Frame file could not be decoded."""


class NonFiniteLoss(AirmarkError):
    """Training loss became NaN or infinite."""


class BadMagic(AirmarkError):
    """Checkpoint does not start with the expected magic string."""


class ModelLoadFailure(AirmarkError):
    """Checkpoint file could not be loaded."""


class EmptyInput(AirmarkError):
    """No input frames were supplied."""


class IoFailure(AirmarkError):
    """Filesystem operation failed."""
