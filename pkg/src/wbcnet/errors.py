"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are invalid or incompatible for the requested operation."""


class GeometryError(ValueError):
    """A convolution or pooling window does not fit the input geometry."""


class LabelError(ValueError):
    """A class label is outside the valid range."""


class DistributionError(ValueError):
    """A probability vector is not normalized."""


class FormatError(ValueError):
    """A file is not in a supported format (bad magic bytes, codec, or version)."""


class DecodeError(ValueError):
    """A file is in a recognized format but its payload is truncated or corrupt."""


class InsufficientDataError(ValueError):
    """A dataset is too small for the requested operation."""


class ArchitectureError(ValueError):
    """A checkpoint does not match the architecture of the target model."""


class NumericError(ArithmeticError):
    """A numeric routine produced or encountered a non-finite value."""
