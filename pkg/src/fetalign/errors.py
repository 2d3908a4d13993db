"""Exception types shared across the package.

File-system problems surface as the builtin ``OSError`` family; everything
domain-specific gets a named class below so callers can react precisely.
"""


class DegenerateInput(ValueError):
    """Point set cannot support the requested fit (too few or collinear)."""


class SingularTransform(ValueError):
    """Affine transform is not invertible."""


class MissingStructure(ValueError):
    """A required anatomical structure is absent from the landmark set."""


class DegenerateImage(ValueError):
    """Image has no usable intensity content (all zero or constant)."""


class EmptyMask(ValueError):
    """Binary mask contains no foreground pixels."""


class DimensionMismatch(ValueError):
    """Raster dimensions do not agree with what the caller expected."""


class SchemaViolation(ValueError):
    """Landmark data violates the per-structure schema (counts, names, bounds)."""


class ParseError(ValueError):
    """File content could not be parsed into the expected record shape."""


class ReferenceNotFound(LookupError):
    """Requested reference subject is not present in the cohort."""


class UnsupportedStructure(ValueError):
    """Operation is undefined for this structure (e.g. maps of 2-point sets)."""


class AlphaTooLarge(ValueError):
    """Alpha shape at the requested alpha drops points or disconnects."""


class EmptyInput(ValueError):
    """An operation that needs at least one element received none."""


class EmptyRaster(ValueError):
    """Both rasters are empty where a non-empty raster is required."""


class TooFewSamples(ValueError):
    """Not enough non-zero paired differences for the signed-rank test."""


class TooSmallImage(ValueError):
    """Image is smaller than the metric's window."""


class InvalidSpec(ValueError):
    """Phantom specification violates its own geometric constraints."""


class ConvergenceWarning(UserWarning):
    """Iterative solver stopped at the iteration cap; best-so-far returned."""
