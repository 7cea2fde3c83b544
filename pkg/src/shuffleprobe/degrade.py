"""Benchmark degradations: Gaussian blur and JPEG recompression.

Both are pinned down to the byte level. Blur uses an explicit separable
kernel of radius ceil(3 sigma), normalized to unit sum, applied with
reflect padding, so the impulse response can be checked against the closed
form. JPEG goes through Pillow's codec with subsampling fixed by quality
(4:2:0 below 96, 4:4:4 at 96 and above); the codec version is recorded in
every derived manifest because bytes may differ across codec builds.
Quality 100 still quantizes: it is not the identity.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

import numpy as np
from PIL import Image, features

from .errors import (
    ManifestError,
    NonPositiveSigmaError,
    QualityOutOfRangeError,
    RangeViolationError,
)
from .manifest import (
    Manifest,
    ManifestRow,
    decoder_version,
    load_image,
    read_manifest,
    write_manifest,
)
from .validation import check_image, to_uint8_image


def jpeg_codec_version() -> str:
    return f"pillow/{features.version('jpg') or 'unknown-jpeg'}"


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D kernel of radius ceil(3 sigma), normalized to sum exactly 1."""
    if not sigma > 0:
        raise NonPositiveSigmaError(f"sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (kernel.size - 1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, kernel.size, axis=axis
    )
    return windows @ kernel


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur preserving dtype.

    uint8 input is blurred in float and re-quantized by rounding; float
    input stays float. The image must be at least one kernel radius wide in
    both dimensions for reflect padding to be defined.
    """
    arr = check_image(image)
    kernel = gaussian_kernel(sigma)
    radius = (kernel.size - 1) // 2
    h, w = arr.shape[:2]
    if h <= radius or w <= radius:
        raise NonPositiveSigmaError(
            f"image {w}x{h} is too small for blur radius {radius}"
        )
    work = arr.astype(np.float64)
    work = _convolve_axis(work, kernel, axis=0)
    work = _convolve_axis(work, kernel, axis=1)
    if arr.dtype == np.uint8:
        return np.clip(np.rint(work), 0, 255).astype(np.uint8)
    return np.clip(work, 0.0, 1.0).astype(arr.dtype)


def _check_quality(quality: int) -> int:
    q = int(quality)
    if not 1 <= q <= 100:
        raise QualityOutOfRangeError(f"JPEG quality must be in [1, 100], got {quality}")
    return q


def jpeg_subsampling(quality: int) -> int:
    """Pillow subsampling code: 2 means 4:2:0, 0 means 4:4:4."""
    return 0 if _check_quality(quality) >= 96 else 2


def jpeg_bytes(image: np.ndarray, quality: int) -> bytes:
    """Encode to JPEG bytes with the pinned codec settings (8-bit only)."""
    q = _check_quality(quality)
    arr = check_image(image)
    if arr.dtype != np.uint8:
        raise RangeViolationError(
            "JPEG degradation requires uint8 input; quantize first"
        )
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(
        buf, format="JPEG", quality=q, subsampling=jpeg_subsampling(q)
    )
    return buf.getvalue()


def jpeg_compress(image: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip through the JPEG codec at the given quality."""
    data = jpeg_bytes(image, quality)
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Degradation sweeps over manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradeSpec:
    kind: str  # "blur" | "jpeg"
    value: float

    def __post_init__(self):
        if self.kind not in ("blur", "jpeg"):
            raise ManifestError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "blur" and not self.value > 0:
            raise NonPositiveSigmaError(
                f"blur sigma must be > 0, got {self.value}"
            )
        if self.kind == "jpeg":
            _check_quality(int(self.value))

    @property
    def tag(self) -> str:
        if self.kind == "blur":
            return f"blur-sigma{self.value:g}"
        return f"jpeg-q{int(self.value)}"

    @classmethod
    def parse(cls, text: str) -> "DegradeSpec":
        kind, _, value = text.partition(":")
        if not value:
            raise ManifestError(
                f"degradation spec {text!r} must look like blur:2.0 or jpeg:90"
            )
        return cls(kind=kind.strip(), value=float(value))


@dataclass
class SweepOutcome:
    written: int = 0
    skipped: int = 0
    manifests: dict[str, Path] = None

    def __post_init__(self):
        if self.manifests is None:
            self.manifests = {}


def _write_if_changed(path: Path, data: bytes) -> bool:
    """Write bytes unless the file already holds exactly them."""
    if path.is_file():
        existing = hashlib.sha256(path.read_bytes()).digest()
        if existing == hashlib.sha256(data).digest():
            return False
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return True


def _png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def apply_degradation_sweep(
    manifest_path: str | Path,
    specs: list[DegradeSpec],
    out_dir: str | Path,
    extras: dict | None = None,
) -> SweepOutcome:
    """Materialize degraded copies of a corpus, one subtree per spec.

    For manifest <base>.tsv and spec blur sigma 2, images land under
    <out_dir>/<tag>/ and the derived manifest at
    <out_dir>/<base>.blur-sigma2.manifest. Outputs are deterministic, and
    an unchanged file is never rewritten, so re-running is a no-op.
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    out_dir = Path(out_dir)
    base = manifest_path.stem
    outcome = SweepOutcome()
    for spec in specs:
        rows = []
        for row in manifest.rows:
            src = manifest.resolve(row)
            image = load_image(src)
            rel = PurePosixPath(row.image_path)
            if spec.kind == "blur":
                data = _png_bytes(gaussian_blur(to_uint8_image(image), spec.value))
                rel_out = rel.with_suffix(".png")
            else:
                data = jpeg_bytes(image, int(spec.value))
                rel_out = rel.with_suffix(".jpg")
            target = out_dir / spec.tag / rel_out
            if _write_if_changed(target, data):
                outcome.written += 1
            else:
                outcome.skipped += 1
            rows.append(
                ManifestRow(
                    image_path=str(PurePosixPath(spec.tag) / rel_out),
                    label=row.label,
                    generator_name=row.generator_name,
                    content_class=row.content_class,
                    split=row.split,
                )
            )
        meta = dict(manifest.extras)
        meta.update(
            {
                "degradation": f"{spec.kind}={spec.value:g}",
                "source_manifest": manifest_path.name,
                "decoder": decoder_version(),
            }
        )
        if spec.kind == "jpeg":
            meta["codec"] = jpeg_codec_version()
        meta.update(extras or {})
        derived = Manifest(rows=rows, root=out_dir, extras=meta)
        mpath = out_dir / f"{base}.{spec.tag}.manifest"
        write_manifest(derived, mpath)
        outcome.manifests[spec.tag] = mpath
    return outcome
