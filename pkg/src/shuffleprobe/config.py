"""Run configuration: one YAML file, one digest.

Every artifact a run produces embeds the digest of the configuration that
made it, so artifacts can be matched to configs later without trusting file
names. The digest is a sha256 over a canonical JSON rendering (sorted keys,
no whitespace variance); timestamps never enter artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ManifestError


def canonical_digest(obj) -> str:
    """sha256 hex digest of an object's canonical JSON form."""
    payload = json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class TrainSettings:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    optimizer: str = "adam"
    views_per_epoch: int = 1
    validation_fraction: float = 0.1
    patience: int = 5


@dataclass
class GanTwinSettings:
    latent_dim: int = 100
    target_size: int = 64
    steps: int = 2000
    learning_rate: float = 2e-4
    psnr_gate: float = 30.0


@dataclass
class DmTwinSettings:
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    psnr_gate: float | None = None


@dataclass
class ProjectConfig:
    """Everything a run needs, resolvable from one YAML document."""

    backend: str = "avgpool-texture"
    backend_stride: int = 28
    backend_weights: str | None = None
    backend_sha256: str | None = None
    input_size: int = 224
    patch_sizes: tuple[int, ...] = (224, 56, 28)
    n_views: int = 10
    threshold: float = 0.5
    seed: int = 0
    train: TrainSettings = field(default_factory=TrainSettings)
    blur_sigmas: tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    jpeg_qualities: tuple[int, ...] = (30, 50, 70, 90, 100)
    gan: GanTwinSettings = field(default_factory=GanTwinSettings)
    dm: DmTwinSettings = field(default_factory=DmTwinSettings)

    def digest(self) -> str:
        return canonical_digest(asdict(self))


def _coerce(dc_cls, data: dict):
    fields = {f.name for f in dc_cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ManifestError(
            f"unknown config keys for {dc_cls.__name__}: {sorted(unknown)}"
        )
    return dc_cls(**data)


def load_config(path: str | Path | None) -> ProjectConfig:
    """Load YAML into a ProjectConfig; None returns the defaults."""
    if path is None:
        return ProjectConfig()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ManifestError(f"config {path} must be a mapping")
    for key, cls in (
        ("train", TrainSettings),
        ("gan", GanTwinSettings),
        ("dm", DmTwinSettings),
    ):
        if key in raw and isinstance(raw[key], dict):
            raw[key] = _coerce(cls, raw[key])
    for key in ("patch_sizes", "blur_sigmas", "jpeg_qualities"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    return _coerce(ProjectConfig, raw)
