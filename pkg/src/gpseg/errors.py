"""Exception types raised by the public API."""


class GpsegError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(GpsegError):
    """Operands have incompatible shapes."""


class NotSymmetric(GpsegError):
    """Matrix expected to be symmetric is not, beyond tolerance."""


class NotPositiveDefinite(GpsegError):
    """Factorization failed even after the full jitter schedule."""


class EmptySupport(GpsegError):
    """A model cannot be fitted on zero support points."""


class SingularJoint(GpsegError):
    """Direct elimination hit a zero pivot beyond the jitter schedule."""


class MissingFullCov(GpsegError):
    """Requested representation needs the full posterior covariance."""


class SpatialMismatch(GpsegError):
    """Declared spatial grid does not match the number of query points."""


class BadMagic(GpsegError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(GpsegError):
    """File declares a version or dtype code this reader does not handle."""


class TruncatedFile(GpsegError):
    """File ends before the declared payload is complete."""


class TrailingData(GpsegError):
    """File contains bytes past the declared payload."""


class NonFiniteData(GpsegError):
    """Data contains NaN or infinite values."""


class NonBinaryData(GpsegError):
    """Mask payload contains bytes other than 0 and 1."""


class OddDimensions(GpsegError):
    """Factor-2 downsampling requires even grid dimensions."""


class IndivisibleDimensions(GpsegError):
    """Mask size is not an integer multiple of the target grid."""


class InsufficientImages(GpsegError):
    """No class in the fold has enough images for the requested shots."""


class InvalidConfig(GpsegError):
    """Configuration failed validation; the message names the field."""


class IncompatibleLayout(GpsegError):
    """Representation layout cannot be consumed by this readout."""


class ShapeMismatch(GpsegError):
    """Prediction and ground-truth grids differ in size."""


class EmptyClass(GpsegError):
    """A class listed for averaging has an empty union."""
