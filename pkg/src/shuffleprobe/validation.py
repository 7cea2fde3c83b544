"""Input validation helpers.

Images travel through the package as HxWx3 numpy arrays, either uint8 in
[0, 255] or floating point in [0, 1]. Helpers here normalize and check that
contract once so the math modules can assume it.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    EmptyBatchError,
    RangeViolationError,
    ShapeMismatchError,
    SingleClassDatasetError,
)

# Slack for float images that picked up rounding dust on the way in.
_FLOAT_RANGE_TOL = 1e-6


def check_image(image: np.ndarray) -> np.ndarray:
    """Validate an HxWx3 image array and return it unchanged."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatchError(
            f"expected an HxWx3 array, got shape {arr.shape!r}"
        )
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(f"image has an empty axis: {arr.shape!r}")
    if arr.dtype == np.uint8:
        return arr
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(np.isfinite(arr)):
            raise RangeViolationError("float image contains NaN or inf")
        lo = float(arr.min(initial=0.0))
        hi = float(arr.max(initial=0.0))
        if lo < -_FLOAT_RANGE_TOL or hi > 1.0 + _FLOAT_RANGE_TOL:
            raise RangeViolationError(
                f"float image values must lie in [0, 1], got [{lo:g}, {hi:g}]"
            )
        return arr
    raise ShapeMismatchError(
        f"image dtype must be uint8 or floating, got {arr.dtype}"
    )


def as_float_image(image: np.ndarray) -> np.ndarray:
    """Return the image as float64 in [0, 1] (uint8 is scaled by 1/255)."""
    arr = check_image(image)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def to_uint8_image(image: np.ndarray) -> np.ndarray:
    """Quantize a validated image to uint8 with round-half-away behavior."""
    arr = check_image(image)
    if arr.dtype == np.uint8:
        return arr
    scaled = np.clip(arr.astype(np.float64), 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Crop the central size x size window. The image must be large enough."""
    arr = check_image(image)
    h, w = arr.shape[:2]
    if h < size or w < size:
        raise ShapeMismatchError(
            f"cannot center-crop {h}x{w} image to {size}x{size}"
        )
    top = (h - size) // 2
    left = (w - size) // 2
    return arr[top : top + size, left : left + size]


def check_feature_matrix(X: np.ndarray) -> np.ndarray:
    """Validate a 2-D float feature matrix with at least one row."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected 2-D features, got shape {arr.shape!r}")
    if arr.shape[0] == 0:
        raise EmptyBatchError("feature matrix has no rows")
    if not np.all(np.isfinite(arr)):
        raise RangeViolationError("features contain NaN or inf")
    return arr


def check_binary_labels(y: np.ndarray, n: int, require_both: bool = False) -> np.ndarray:
    """Validate a 0/1 label vector of length n."""
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise ShapeMismatchError(
            f"expected {n} labels in a 1-D array, got shape {arr.shape!r}"
        )
    arr = arr.astype(np.int64)
    if not np.all((arr == 0) | (arr == 1)):
        raise RangeViolationError("labels must be 0 (real) or 1 (fake)")
    if require_both and len(np.unique(arr)) < 2:
        raise SingleClassDatasetError("training labels contain a single class")
    return arr
