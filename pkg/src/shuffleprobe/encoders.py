"""Frozen image encoders behind one small contract.

A backend maps a fixed-size RGB image to a feature vector and is never
trained here; detection heads are linear probes on top. Two deterministic
toy backends (pure linear maps of the pixels) carry the test suite and the
toy experiments. The production backend wraps a CLIP ViT-L/14 vision tower
loaded from a local weights directory; weights are referenced by path plus
optional content hash, never bundled.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumMismatchError,
    DimensionMismatchError,
    SizeMismatchError,
    WeightsNotFoundError,
)
from .validation import as_float_image


class EncoderBackend:
    """Shared surface for all backends.

    Subclasses set name, input_size, token_size, feature_dim and is_linear,
    and implement _encode_float on a float64 [0, 1] image of exactly
    input_size x input_size.
    """

    name: str = "base"
    input_size: int = 224
    token_size: int = 1
    feature_dim: int = 0
    is_linear: bool = False

    def _check(self, image: np.ndarray) -> np.ndarray:
        arr = as_float_image(image)
        h, w = arr.shape[:2]
        if h != self.input_size or w != self.input_size:
            raise SizeMismatchError(
                f"backend {self.name!r} expects {self.input_size}px square "
                f"input, got {h}x{w}"
            )
        return arr

    def _encode_float(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode(self, image: np.ndarray) -> np.ndarray:
        """Feature vector (feature_dim,) as float64."""
        feat = self._encode_float(self._check(image))
        if feat.shape != (self.feature_dim,):
            raise DimensionMismatchError(
                f"backend {self.name!r} produced {feat.shape!r}, "
                f"expected ({self.feature_dim},)"
            )
        return feat

    def encode_batch(self, images) -> np.ndarray:
        """Features for a sequence of images, stacked in order."""
        return np.stack([self.encode(img) for img in images], axis=0)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "input_size": self.input_size,
            "feature_dim": self.feature_dim,
            "token_size": self.token_size,
        }


def _block_view(image: np.ndarray, stride: int) -> np.ndarray:
    side = image.shape[0] // stride
    return image.reshape(side, stride, side, stride, 3)


class AvgPoolEncoder(EncoderBackend):
    """Block-average pooling, flattened. d = 3 * (input_size / stride)^2.

    Exactly linear in the pixels, so averaging images and averaging features
    commute; blind to anything that cancels within a block.
    """

    name = "avgpool-flatten"
    is_linear = True

    def __init__(self, stride: int = 28, input_size: int = 224):
        if input_size % stride != 0:
            raise SizeMismatchError(
                f"stride {stride} must divide input size {input_size}"
            )
        self.stride = stride
        self.input_size = input_size
        self.token_size = stride
        side = input_size // stride
        self.feature_dim = 3 * side * side

    def _encode_float(self, image: np.ndarray) -> np.ndarray:
        return _block_view(image, self.stride).mean(axis=(1, 3)).ravel()


class TexturePoolEncoder(EncoderBackend):
    """Block means plus block checkerboard responses.

    The second half of the vector is each block's projection onto a period-2
    checkerboard (phase fixed in absolute pixel coordinates), a crude
    highest-frequency channel that vanishes under blur while staying linear
    in the pixels. d = 6 * (input_size / stride)^2.
    """

    name = "avgpool-texture"
    is_linear = True

    def __init__(self, stride: int = 28, input_size: int = 224):
        if input_size % stride != 0:
            raise SizeMismatchError(
                f"stride {stride} must divide input size {input_size}"
            )
        if stride % 2 != 0:
            raise SizeMismatchError(
                f"stride must be even to keep checkerboard phase, got {stride}"
            )
        self.stride = stride
        self.input_size = input_size
        self.token_size = stride
        side = input_size // stride
        self.feature_dim = 6 * side * side
        ii, jj = np.meshgrid(
            np.arange(stride), np.arange(stride), indexing="ij"
        )
        self._checker = np.where((ii + jj) % 2 == 0, 1.0, -1.0) / (stride * stride)

    def _encode_float(self, image: np.ndarray) -> np.ndarray:
        blocks = _block_view(image, self.stride)
        means = blocks.mean(axis=(1, 3)).ravel()
        checker = np.einsum(
            "abcde,bd->ace", blocks, self._checker
        ).ravel()
        return np.concatenate([means, checker])


# OpenAI CLIP pixel normalization, expected by the ViT-L/14 tower.
_CLIP_MEAN = np.array([0.48145466, 0.4578275, 0.40821073])
_CLIP_STD = np.array([0.26862954, 0.26130258, 0.27577711])


def _resolve_weights_file(path: Path) -> Path:
    if path.is_file():
        return path
    for candidate in ("model.safetensors", "pytorch_model.bin"):
        if (path / candidate).is_file():
            return path / candidate
    raise WeightsNotFoundError(
        f"no weights file found under {path} "
        "(looked for model.safetensors, pytorch_model.bin)"
    )


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ClipVitL14Encoder(EncoderBackend):
    """CLIP ViT-L/14 vision tower with projection, loaded from local weights.

    Images are normalized with the CLIP constants and pushed through the
    frozen tower; the projected image embedding is the feature. Loading is
    lazy so the rest of the package never pays the torch import.
    """

    name = "clip-vit-l14"
    input_size = 224
    token_size = 14
    is_linear = False

    def __init__(self, weights: str | Path, sha256: str | None = None):
        path = Path(weights)
        if not path.exists():
            raise WeightsNotFoundError(f"encoder weights not found: {path}")
        weights_file = _resolve_weights_file(path)
        if sha256 is not None:
            actual = _sha256_file(weights_file)
            if actual != sha256.lower():
                raise ChecksumMismatchError(
                    f"weights {weights_file} hash {actual} does not match "
                    f"configured {sha256.lower()}"
                )
        import torch
        from transformers import CLIPVisionModelWithProjection

        self._torch = torch
        model = CLIPVisionModelWithProjection.from_pretrained(
            str(path if path.is_dir() else path.parent), local_files_only=True
        )
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self._model = model
        self.feature_dim = int(model.config.projection_dim)
        self.weights_file = str(weights_file)

    def _encode_float(self, image: np.ndarray) -> np.ndarray:
        return self.encode_batch([image])[0]

    def encode_batch(self, images) -> np.ndarray:
        arrs = [self._check(img) for img in images]
        stack = (np.stack(arrs) - _CLIP_MEAN) / _CLIP_STD
        tensor = self._torch.from_numpy(
            stack.transpose(0, 3, 1, 2).astype(np.float32)
        )
        with self._torch.no_grad():
            out = self._model(pixel_values=tensor).image_embeds
        return out.numpy().astype(np.float64)


@dataclass(frozen=True)
class BackendSpec:
    """Configuration needed to build a backend by name."""

    name: str
    stride: int = 28
    input_size: int = 224
    weights: str | None = None
    sha256: str | None = None


_TOY_BACKENDS = {
    "avgpool-flatten": AvgPoolEncoder,
    "avgpool-texture": TexturePoolEncoder,
}

KNOWN_BACKENDS = (*sorted(_TOY_BACKENDS), "clip-vit-l14")


def load_backend(spec: BackendSpec) -> EncoderBackend:
    """Build the backend a spec names, validating weight provenance."""
    if spec.name in _TOY_BACKENDS:
        return _TOY_BACKENDS[spec.name](
            stride=spec.stride, input_size=spec.input_size
        )
    if spec.name == "clip-vit-l14":
        if spec.weights is None:
            raise WeightsNotFoundError(
                "backend clip-vit-l14 needs a local weights path"
            )
        return ClipVitL14Encoder(weights=spec.weights, sha256=spec.sha256)
    raise ValueError(
        f"unknown backend {spec.name!r}; known: {', '.join(KNOWN_BACKENDS)}"
    )
