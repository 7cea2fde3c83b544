"""Exception types shared across the package.

Everything derives from ShuffleProbeError so callers can catch the whole
family; most types also subclass ValueError because they signal bad inputs.
"""


class ShuffleProbeError(Exception):
    """Base class for all package-specific errors."""


class PatchTooLargeError(ShuffleProbeError, ValueError):
    """Patch size exceeds one of the image dimensions."""


class NotEnoughPatchesError(ShuffleProbeError, ValueError):
    """Image grid holds fewer tiles than a composite needs."""


class IndivisibleTargetError(ShuffleProbeError, ValueError):
    """Composite target size is not a multiple of the patch size."""


class LengthMismatchError(ShuffleProbeError, ValueError):
    """Permutation length does not match the tile count."""


class WeightsNotFoundError(ShuffleProbeError, FileNotFoundError):
    """Encoder weight file or directory is missing."""


class ChecksumMismatchError(ShuffleProbeError, ValueError):
    """Weight file content hash differs from the configured hash."""


class SizeMismatchError(ShuffleProbeError, ValueError):
    """Image dimensions differ from the encoder input size."""


class RangeViolationError(ShuffleProbeError, ValueError):
    """Pixel values fall outside the declared range."""


class DimensionMismatchError(ShuffleProbeError, ValueError):
    """Feature vector length does not match the expected dimension."""


class EmptyBatchError(ShuffleProbeError, ValueError):
    """An operation that needs at least one sample received none."""


class SingleClassDatasetError(ShuffleProbeError, ValueError):
    """Training data contains only one of the two labels."""


class ImageTooSmallError(ShuffleProbeError, ValueError):
    """Image is smaller than the detector input size."""


class BundleBackendMismatchError(ShuffleProbeError, ValueError):
    """Bundle heads and the supplied encoder disagree on backend or width."""


class IndivisiblePatchSizeError(ShuffleProbeError, ValueError):
    """Bundle member patch size does not divide the encoder input size."""


class NonPositiveSigmaError(ShuffleProbeError, ValueError):
    """Gaussian blur sigma must be strictly positive."""


class QualityOutOfRangeError(ShuffleProbeError, ValueError):
    """JPEG quality must lie in [1, 100]."""


class DegenerateLabelsError(ShuffleProbeError, ValueError):
    """Ranking metric needs both a positive and a negative example."""


class EmptySetError(ShuffleProbeError, ValueError):
    """Metric over an empty record set is undefined."""


class IdMismatchError(ShuffleProbeError, ValueError):
    """Two record sets do not cover the same image ids."""


class DivergedFitError(ShuffleProbeError, RuntimeError):
    """Generator fit ended with a higher loss than it started with."""


class ShapeMismatchError(ShuffleProbeError, ValueError):
    """Array shape differs from what the operation requires."""


class LayoutNotRecognizedError(ShuffleProbeError, ValueError):
    """Directory tree does not follow the expected corpus layout."""


class ManifestError(ShuffleProbeError, ValueError):
    """Manifest file is malformed or references bad data."""
