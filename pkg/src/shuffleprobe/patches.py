"""Tile partitioning and patch shuffling.

An image is cut into non-overlapping s x s tiles anchored at the top-left
corner; trailing rows and columns that do not fill a tile are dropped. A
shuffle permutes whole tiles with a uniform permutation and reassembles the
result, which destroys global layout while leaving every tile's pixels
intact. A composite draws a subset of tiles from a (possibly larger) grid
and packs them into a smaller square image, so a full-size photo can be
summarized by several shuffled crops' worth of texture.

All operations are pure: inputs are never modified and outputs own their
memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import (
    IndivisibleTargetError,
    LengthMismatchError,
    NotEnoughPatchesError,
    PatchTooLargeError,
)
from .rng import fisher_yates_permutation, make_rng
from .validation import check_image


@dataclass(frozen=True)
class PatchGrid:
    """Tiles of one image in row-major order.

    patches has shape (rows * cols, patch_size, patch_size, 3) and keeps the
    source dtype.
    """

    patch_size: int
    rows: int
    cols: int
    patches: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.rows * self.cols, self.patch_size, self.patch_size)
        if self.patches.shape[:3] != expected:
            raise LengthMismatchError(
                f"patch array shape {self.patches.shape!r} does not match "
                f"{self.rows}x{self.cols} grid of {self.patch_size}px tiles"
            )

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


def partition(image: np.ndarray, patch_size: int) -> PatchGrid:
    """Cut an image into its grid of s x s tiles.

    Raises PatchTooLargeError when not even one tile fits.
    """
    arr = check_image(image)
    if patch_size < 1:
        raise PatchTooLargeError(f"patch size must be >= 1, got {patch_size}")
    h, w = arr.shape[:2]
    if patch_size > h or patch_size > w:
        raise PatchTooLargeError(
            f"patch size {patch_size} exceeds image extent {h}x{w}"
        )
    rows, cols = h // patch_size, w // patch_size
    cropped = arr[: rows * patch_size, : cols * patch_size]
    s = patch_size
    tiles = (
        cropped.reshape(rows, s, cols, s, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, s, s, 3)
        .copy()
    )
    return PatchGrid(patch_size=s, rows=rows, cols=cols, patches=tiles)


def assemble(grid: PatchGrid) -> np.ndarray:
    """Lay the tiles back out as one (rows*s) x (cols*s) image."""
    s = grid.patch_size
    return (
        grid.patches.reshape(grid.rows, grid.cols, s, s, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.rows * s, grid.cols * s, 3)
        .copy()
    )


def shuffle(grid: PatchGrid, rng: np.random.Generator) -> tuple[PatchGrid, np.ndarray]:
    """Permute tiles uniformly at random.

    Returns the shuffled grid and the permutation used, where output tile k
    is input tile perm[k].
    """
    perm = fisher_yates_permutation(grid.n_patches, rng)
    shuffled = PatchGrid(
        patch_size=grid.patch_size,
        rows=grid.rows,
        cols=grid.cols,
        patches=grid.patches[perm].copy(),
    )
    return shuffled, perm


def unshuffle(grid: PatchGrid, perm: np.ndarray) -> PatchGrid:
    """Invert a recorded shuffle so unshuffle(shuffle(g)) == g."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (grid.n_patches,):
        raise LengthMismatchError(
            f"permutation length {perm.shape} does not match "
            f"{grid.n_patches} tiles"
        )
    if not np.array_equal(np.sort(perm), np.arange(grid.n_patches)):
        raise LengthMismatchError("permutation is not a bijection on the tiles")
    restored = np.empty_like(grid.patches)
    restored[perm] = grid.patches
    return PatchGrid(
        patch_size=grid.patch_size,
        rows=grid.rows,
        cols=grid.cols,
        patches=restored,
    )


def patch_shuffle(
    image: np.ndarray, patch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Shuffle an image's tiles in place of its layout: partition, permute,
    reassemble. The output is (h // s * s) x (w // s * s)."""
    shuffled, _ = shuffle(partition(image, patch_size), rng)
    return assemble(shuffled)


def sample_composite(
    image: np.ndarray,
    patch_size: int,
    target_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Build a target_size square image from tiles drawn off the full grid.

    (target_size / patch_size)^2 tiles are sampled uniformly without
    replacement from every tile the image yields, in randomized order. When
    the image is exactly target_size on both sides this is a plain shuffle.
    """
    if target_size < 1:
        raise IndivisibleTargetError(
            f"target size must be >= 1, got {target_size}"
        )
    if target_size % patch_size != 0:
        raise IndivisibleTargetError(
            f"target size {target_size} is not a multiple of patch size {patch_size}"
        )
    grid = partition(image, patch_size)
    side = target_size // patch_size
    needed = side * side
    if grid.n_patches < needed:
        raise NotEnoughPatchesError(
            f"grid yields {grid.n_patches} tiles, composite needs {needed}"
        )
    order = fisher_yates_permutation(grid.n_patches, rng)
    chosen = order[:needed]
    composite = PatchGrid(
        patch_size=patch_size,
        rows=side,
        cols=side,
        patches=grid.patches[chosen].copy(),
    )
    return assemble(composite)


class PatchShuffle(TransformerMixin, BaseEstimator):
    """Transformer that tile-shuffles images.

    fit seeds the internal generator; each transform call then consumes the
    stream, so a fitted instance yields a reproducible sequence of fresh
    views. Accepts a single HxWx3 array or an iterable of them.
    """

    def __init__(self, patch_size: int = 28, random_state: int | None = None):
        self.patch_size = patch_size
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.patch_size < 1:
            raise PatchTooLargeError(
                f"patch size must be >= 1, got {self.patch_size}"
            )
        self.rng_ = make_rng(self.random_state)
        return self

    def transform(self, X):
        if not hasattr(self, "rng_"):
            raise NotFittedError("PatchShuffle must be fit before transform")
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return patch_shuffle(X, self.patch_size, self.rng_)
        return [patch_shuffle(img, self.patch_size, self.rng_) for img in X]


class CompositeSampler(TransformerMixin, BaseEstimator):
    """Transformer that draws random tile composites from full images."""

    def __init__(
        self,
        patch_size: int = 28,
        target_size: int = 224,
        random_state: int | None = None,
    ):
        self.patch_size = patch_size
        self.target_size = target_size
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.target_size % self.patch_size != 0:
            raise IndivisibleTargetError(
                f"target size {self.target_size} is not a multiple of "
                f"patch size {self.patch_size}"
            )
        self.rng_ = make_rng(self.random_state)
        return self

    def transform(self, X):
        if not hasattr(self, "rng_"):
            raise NotFittedError("CompositeSampler must be fit before transform")
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return sample_composite(
                X, self.patch_size, self.target_size, self.rng_
            )
        return [
            sample_composite(img, self.patch_size, self.target_size, self.rng_)
            for img in X
        ]
