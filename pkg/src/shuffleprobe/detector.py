"""Multi-scale shuffled-view scoring and fusion.

One detector holds a frozen encoder plus one linear head per tile size.
Scoring an image takes, per head: the unshuffled center crop when the tile
size equals the encoder input, otherwise the mean feature over n random
tile composites drawn from the full image grid. Per-scale logits are
averaged and squashed to a fake probability; because heads are affine,
averaging features before the head equals averaging per-view logits.

Determinism contract: the per-image seed is derived from (master seed,
image id) alone, so batch order, worker count, and which other images are
scored can never change a record.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .encoders import EncoderBackend
from .errors import (
    BundleBackendMismatchError,
    ImageTooSmallError,
    IndivisiblePatchSizeError,
    ManifestError,
)
from .heads import LinearHeadClassifier, sigmoid
from .manifest import Manifest, ManifestRow, load_image
from .patches import sample_composite
from .rng import derive_seed, make_rng
from .validation import center_crop, check_image

SCORES_SCHEMA = "shuffleprobe-scores/v1"
BUNDLE_SCHEMA = "shuffleprobe-bundle/v1"


@dataclass(frozen=True)
class ScoreRecord:
    """Everything scored for one image; written one per line."""

    image_id: str
    per_scale_logits: dict[int, float]
    fused_logit: float
    probability: float
    predicted_label: int | None
    true_label: int | None
    seed: int
    generator_name: str = ""
    content_class: str = ""
    error: str | None = None


def classify(probability: float, threshold: float = 0.5) -> int:
    """1 (fake) iff probability >= threshold; ties count as fake."""
    return 1 if probability >= threshold else 0


class ShuffleEnsembleDetector(BaseEstimator):
    """Frozen ensemble of per-scale heads over one encoder backend.

    heads: fitted LinearHeadClassifier instances, one per distinct tile
    size; each must match the backend's name and feature width, and its
    tile size must divide the encoder input size. Tile sizes below the
    backend's token size only earn a warning: the encoder then mixes
    content across tile boundaries, which blunts the shuffle.
    """

    def __init__(
        self,
        backend: EncoderBackend,
        heads: tuple[LinearHeadClassifier, ...] | list[LinearHeadClassifier] = (),
        n_views: int = 10,
        threshold: float = 0.5,
        random_state: int = 0,
    ):
        self.backend = backend
        self.heads = tuple(heads)
        self.n_views = n_views
        self.threshold = threshold
        self.random_state = random_state
        self._validate()

    def _validate(self) -> None:
        if not self.heads:
            raise BundleBackendMismatchError("detector needs at least one head")
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        sizes = [h.patch_size for h in self.heads]
        if len(set(sizes)) != len(sizes):
            raise IndivisiblePatchSizeError(
                f"duplicate tile sizes in ensemble: {sizes}"
            )
        size = self.backend.input_size
        for head in self.heads:
            if not hasattr(head, "coef_"):
                raise NotFittedError(
                    f"head for tile size {head.patch_size} is not fitted"
                )
            if head.backend_name != self.backend.name:
                raise BundleBackendMismatchError(
                    f"head trained on backend {head.backend_name!r}, "
                    f"detector uses {self.backend.name!r}"
                )
            if head.n_features_in_ != self.backend.feature_dim:
                raise BundleBackendMismatchError(
                    f"head expects {head.n_features_in_} features, backend "
                    f"yields {self.backend.feature_dim}"
                )
            if size % head.patch_size != 0:
                raise IndivisiblePatchSizeError(
                    f"tile size {head.patch_size} does not divide "
                    f"input size {size}"
                )
            if head.patch_size < self.backend.token_size:
                warnings.warn(
                    f"tile size {head.patch_size} is below the backend token "
                    f"size {self.backend.token_size}; embeddings will mix "
                    "across tile boundaries",
                    stacklevel=2,
                )

    @property
    def patch_sizes(self) -> tuple[int, ...]:
        return tuple(h.patch_size for h in self.heads)

    # -- scoring -----------------------------------------------------------

    def score_image(
        self,
        image: np.ndarray,
        image_id: str = "",
        seed: int = 0,
        true_label: int | None = None,
        generator_name: str = "",
        content_class: str = "",
    ) -> ScoreRecord:
        """Score one image under an explicit seed."""
        arr = check_image(image)
        size = self.backend.input_size
        if arr.shape[0] < size or arr.shape[1] < size:
            raise ImageTooSmallError(
                f"image {image_id or '<anonymous>'} is "
                f"{arr.shape[1]}x{arr.shape[0]}, detector needs {size}px"
            )
        per_scale: dict[int, float] = {}
        for head in self.heads:
            s = head.patch_size
            if s == size:
                feature = self.backend.encode(center_crop(arr, size))
            else:
                rng = make_rng(derive_seed(seed, f"scale:{s}"))
                views = [
                    sample_composite(arr, s, size, rng)
                    for _ in range(self.n_views)
                ]
                feature = self.backend.encode_batch(views).mean(axis=0)
            per_scale[s] = head.logit(feature)
        fused = float(np.mean(list(per_scale.values())))
        prob = float(sigmoid(np.array([fused]))[0])
        return ScoreRecord(
            image_id=image_id,
            per_scale_logits=per_scale,
            fused_logit=fused,
            probability=prob,
            predicted_label=classify(prob, self.threshold),
            true_label=true_label,
            seed=seed,
            generator_name=generator_name,
            content_class=content_class,
        )

    def _score_row(
        self, manifest: Manifest, row: ManifestRow, master_seed: int, strict: bool
    ) -> ScoreRecord:
        seed = derive_seed(master_seed, row.image_id)
        try:
            image = load_image(manifest.resolve(row))
            return self.score_image(
                image,
                image_id=row.image_id,
                seed=seed,
                true_label=row.label,
                generator_name=row.generator_name,
                content_class=row.content_class,
            )
        except Exception as exc:
            if strict:
                raise
            return ScoreRecord(
                image_id=row.image_id,
                per_scale_logits={},
                fused_logit=float("nan"),
                probability=float("nan"),
                predicted_label=None,
                true_label=row.label,
                seed=seed,
                generator_name=row.generator_name,
                content_class=row.content_class,
                error=f"{type(exc).__name__}: {exc}",
            )

    def score_manifest(
        self,
        manifest: Manifest,
        master_seed: int = 0,
        workers: int = 1,
        strict: bool = True,
    ) -> list[ScoreRecord]:
        """Score every row, in manifest order.

        workers only sets the thread count; records are identical for any
        value because each image's randomness is self-contained.
        """
        if workers <= 1:
            return [
                self._score_row(manifest, row, master_seed, strict)
                for row in manifest.rows
            ]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(
                    lambda row: self._score_row(manifest, row, master_seed, strict),
                    manifest.rows,
                )
            )

    # -- sklearn-style convenience over in-memory images -------------------

    def decision_function(self, X) -> np.ndarray:
        """Fused logits for a sequence of images (seeded by position)."""
        return np.array(
            [
                self.score_image(
                    img, image_id=str(i), seed=derive_seed(self.random_state, str(i))
                ).fused_logit
                for i, img in enumerate(X)
            ]
        )

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        p = self.predict_proba(X)[:, 1]
        return (p >= self.threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# Bundle files
# ---------------------------------------------------------------------------


def save_bundle(
    detector: ShuffleEnsembleDetector,
    directory: str | Path,
    extras: dict | None = None,
) -> Path:
    """Write bundle.json plus one head checkpoint per scale."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    members = []
    for head in detector.heads:
        name = f"head_{head.patch_size}.json"
        head.save(directory / name)
        members.append({"patch_size": head.patch_size, "head": name})
    payload = dict(extras or {})
    payload.update({
        "schema": BUNDLE_SCHEMA,
        "backend_name": detector.backend.name,
        "input_size": detector.backend.input_size,
        "n_views": detector.n_views,
        "threshold": detector.threshold,
        "members": members,
    })
    path = directory / "bundle.json"
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return path


def load_bundle(
    path: str | Path, backend: EncoderBackend
) -> ShuffleEnsembleDetector:
    """Rebuild a detector from bundle.json against a live backend."""
    path = Path(path)
    if path.is_dir():
        path = path / "bundle.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("schema") != BUNDLE_SCHEMA:
        raise ManifestError(
            f"{path}: expected schema {BUNDLE_SCHEMA!r}, got {data.get('schema')!r}"
        )
    if data["backend_name"] != backend.name:
        raise BundleBackendMismatchError(
            f"bundle was built for backend {data['backend_name']!r}, "
            f"got {backend.name!r}"
        )
    heads = tuple(
        LinearHeadClassifier.load(path.parent / member["head"])
        for member in data["members"]
    )
    return ShuffleEnsembleDetector(
        backend=backend,
        heads=heads,
        n_views=int(data["n_views"]),
        threshold=float(data["threshold"]),
    )


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------


def write_score_file(
    records: list[ScoreRecord], path: str | Path, meta: dict | None = None
) -> Path:
    """JSON-lines score file: one meta line, then one record per image.

    Output bytes are a pure function of records and meta; no timestamps.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {"kind": "meta", "schema": SCORES_SCHEMA}
    head.update(meta or {})
    lines = [json.dumps(head, sort_keys=True)]
    for r in records:
        row = {
            "kind": "record",
            "image_id": r.image_id,
            "per_scale_logits": {str(k): v for k, v in sorted(r.per_scale_logits.items())},
            "fused_logit": r.fused_logit,
            "probability": r.probability,
            "predicted_label": r.predicted_label,
            "true_label": r.true_label,
            "seed": r.seed,
            "generator_name": r.generator_name,
            "content_class": r.content_class,
            "error": r.error,
        }
        lines.append(json.dumps(row, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_score_file(path: str | Path) -> tuple[dict, list[ScoreRecord]]:
    meta: dict = {}
    records: list[ScoreRecord] = []
    for i, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{i}: not a score line: {exc}") from None
        kind = row.get("kind")
        if kind == "meta":
            if row.get("schema") != SCORES_SCHEMA:
                raise ManifestError(
                    f"{path}:{i}: expected schema {SCORES_SCHEMA!r}, "
                    f"got {row.get('schema')!r}"
                )
            meta = row
        elif kind == "record":
            records.append(
                ScoreRecord(
                    image_id=row["image_id"],
                    per_scale_logits={
                        int(k): float(v)
                        for k, v in row["per_scale_logits"].items()
                    },
                    fused_logit=float(row["fused_logit"]),
                    probability=float(row["probability"]),
                    predicted_label=row["predicted_label"],
                    true_label=row["true_label"],
                    seed=int(row["seed"]),
                    generator_name=row.get("generator_name", ""),
                    content_class=row.get("content_class", ""),
                    error=row.get("error"),
                )
            )
        else:
            raise ManifestError(f"{path}:{i}: unknown line kind {kind!r}")
    if not meta:
        raise ManifestError(f"{path}: missing meta line")
    return meta, records
