"""Corpus manifests, directory scanning, and the synthetic toy corpus.

A manifest is a small TSV file listing images with their label (0 real,
1 fake), source generator, content class, and split. Paths are stored
relative to the manifest's directory when possible, so a corpus directory
can be moved as a unit. Everything downstream (training, scoring, eval,
degradations) speaks manifests; nothing walks directories twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath

import numpy as np
import PIL
from PIL import Image

from .errors import LayoutNotRecognizedError, ManifestError
from .rng import derive_seed, make_rng

SCHEMA_LINE = "# shuffleprobe-manifest v1"
_COLUMNS = ("image_path", "label", "generator_name", "content_class", "split")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def decoder_version() -> str:
    """Identifies the pinned decode path; recorded in derived artifacts."""
    return f"pillow/{PIL.__version__}"


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to uint8 HxWx3 through the pinned path.

    EXIF orientation is deliberately ignored: the bytes on disk are the
    ground truth.
    """
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_png(image: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ManifestError(f"PNG writer expects uint8, got {arr.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    label: int
    generator_name: str = ""
    content_class: str = ""
    split: str = "test"

    @property
    def image_id(self) -> str:
        return self.image_path


@dataclass
class Manifest:
    rows: list[ManifestRow]
    root: Path = field(default_factory=Path)
    extras: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.image_path)
        return p if p.is_absolute() else self.root / p

    def filter(
        self,
        split: str | None = None,
        classes: set[str] | None = None,
        exclude_classes: set[str] | None = None,
    ) -> "Manifest":
        kept = [
            r
            for r in self.rows
            if (split is None or r.split == split)
            and (classes is None or r.content_class in classes)
            and (exclude_classes is None or r.content_class not in exclude_classes)
        ]
        return Manifest(rows=kept, root=self.root, extras=dict(self.extras))

    def content_classes(self) -> list[str]:
        return sorted({r.content_class for r in self.rows})


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write rows as TSV with the schema header; paths relativized to the
    output directory when they live under it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    lines = [SCHEMA_LINE]
    for key in sorted(manifest.extras):
        lines.append(f"# {key}: {manifest.extras[key]}")
    lines.append("\t".join(_COLUMNS))
    for row in manifest.rows:
        p = manifest.resolve(row).resolve()
        try:
            rel = str(PurePosixPath(p.relative_to(base)))
        except ValueError:
            rel = p.as_posix()
        lines.append(
            "\t".join(
                (
                    rel,
                    str(int(row.label)),
                    row.generator_name,
                    row.content_class,
                    row.split,
                )
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        raise ManifestError(
            f"{path} does not start with {SCHEMA_LINE!r}; refusing to guess"
        )
    extras: dict[str, str] = {}
    body: list[str] = []
    for line in lines[1:]:
        if line.startswith("#"):
            if ":" in line:
                key, _, value = line[1:].partition(":")
                extras[key.strip()] = value.strip()
            continue
        if line.strip():
            body.append(line)
    if not body or tuple(body[0].split("\t")) != _COLUMNS:
        raise ManifestError(f"{path} is missing the column header row")
    rows = []
    for i, line in enumerate(body[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(_COLUMNS):
            raise ManifestError(
                f"{path}:{i}: expected {len(_COLUMNS)} columns, got {len(parts)}"
            )
        image_path, label, generator_name, content_class, split = parts
        if label not in ("0", "1"):
            raise ManifestError(f"{path}:{i}: label must be 0 or 1, got {label!r}")
        rows.append(
            ManifestRow(
                image_path=image_path,
                label=int(label),
                generator_name=generator_name,
                content_class=content_class,
                split=split,
            )
        )
    return Manifest(rows=rows, root=path.parent, extras=extras)


def _scan_label_dir(class_dir: Path, sub: str, label: int) -> list[tuple[Path, int]]:
    out = []
    for p in sorted((class_dir / sub).iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            out.append((p, label))
    return out


def scan_real_fake_layout(
    root: str | Path,
    split: str = "test",
    generator_name: str | None = None,
) -> Manifest:
    """Scan the <class>/<0_real|1_fake>/ directory convention.

    A root that itself holds 0_real and 1_fake is treated as one unnamed
    class. Anything else must consist of class directories each holding both
    label subdirectories; offenders are named in the error. Files are taken
    in lexicographic order.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutNotRecognizedError(f"not a directory: {root}")
    if generator_name is None:
        generator_name = root.name

    def class_dirs() -> list[tuple[str, Path]]:
        if (root / "0_real").is_dir() and (root / "1_fake").is_dir():
            return [("", root)]
        found = []
        for child in sorted(root.iterdir()):
            if not child.is_dir():
                continue
            for sub in ("0_real", "1_fake"):
                if not (child / sub).is_dir():
                    raise LayoutNotRecognizedError(
                        f"missing {sub} under {child}"
                    )
            found.append((child.name, child))
        if not found:
            raise LayoutNotRecognizedError(
                f"{root} holds no class directories and no 0_real/1_fake pair"
            )
        return found

    rows = []
    for class_name, class_dir in class_dirs():
        entries = _scan_label_dir(class_dir, "0_real", 0)
        entries += _scan_label_dir(class_dir, "1_fake", 1)
        for path, label in entries:
            rows.append(
                ManifestRow(
                    image_path=str(PurePosixPath(path.relative_to(root))),
                    label=label,
                    generator_name=generator_name if label == 1 else "",
                    content_class=class_name,
                    split=split,
                )
            )
    return Manifest(rows=rows, root=root)


@dataclass
class ValidationReport:
    n_rows: int = 0
    n_real: int = 0
    n_fake: int = 0
    hard_issues: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.hard_issues

    def lines(self) -> list[str]:
        out = [
            f"rows: {self.n_rows} ({self.n_real} real / {self.n_fake} fake)",
            f"hard issues: {len(self.hard_issues)}",
        ]
        out += [f"  ERROR {msg}" for msg in self.hard_issues]
        out += [f"  WARN  {msg}" for msg in self.warnings]
        return out


def validate_manifest(
    manifest: Manifest,
    min_size: int | None = None,
    check_decodable: bool = True,
    imbalance_warn: float = 0.2,
) -> ValidationReport:
    """Check files exist, decode, and meet the size floor; flag imbalance.

    Problems are collected into a report rather than raised, so one bad row
    cannot hide the rest.
    """
    report = ValidationReport(n_rows=len(manifest.rows))
    seen_ids: set[str] = set()
    for row in manifest.rows:
        if row.label == 0:
            report.n_real += 1
        else:
            report.n_fake += 1
        if row.image_id in seen_ids:
            report.warnings.append(f"duplicate image id {row.image_id}")
        seen_ids.add(row.image_id)
        path = manifest.resolve(row)
        if not path.is_file():
            report.hard_issues.append(f"missing file {path}")
            continue
        if check_decodable or min_size is not None:
            try:
                with Image.open(path) as img:
                    w, h = img.size
            except Exception as exc:
                report.hard_issues.append(f"undecodable file {path}: {exc}")
                continue
            if min_size is not None and (w < min_size or h < min_size):
                report.hard_issues.append(
                    f"{path} is {w}x{h}, below the {min_size}px floor"
                )
    total = report.n_real + report.n_fake
    if total:
        minority = min(report.n_real, report.n_fake) / total
        if minority < imbalance_warn:
            report.warnings.append(
                f"label imbalance: {report.n_real} real vs {report.n_fake} fake"
            )
    return report


def split_train_val(
    manifest: Manifest, val_fraction: float = 0.1, seed: int = 0
) -> tuple[Manifest, Manifest]:
    """Deterministic per-path validation carve-out.

    Membership depends only on (seed, image path), never on row order, so
    adding rows later cannot silently move old rows across the split.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ManifestError(f"val fraction must be in [0, 1), got {val_fraction}")
    train_rows, val_rows = [], []
    denom = 1 << 32
    for row in manifest.rows:
        u = derive_seed(seed, f"val-split:{row.image_id}") % denom
        if u / denom < val_fraction:
            val_rows.append(replace(row, split="val"))
        else:
            train_rows.append(row)
    return (
        Manifest(rows=train_rows, root=manifest.root, extras=dict(manifest.extras)),
        Manifest(rows=val_rows, root=manifest.root, extras=dict(manifest.extras)),
    )


# ---------------------------------------------------------------------------
# Synthetic toy corpus
# ---------------------------------------------------------------------------

TOY_GENERATOR_NAME = "toy-checker"


@dataclass(frozen=True)
class ToyCorpusSpec:
    """Knobs for the planted-artifact corpus.

    Real images are a class-specific smooth scene (tinted gradient plus a
    blob at a class-specific position) with per-image jitter and pixel
    noise. Fake images are fresh draws from the same scene model carrying a
    planted cue:

    - artifact_amplitude: peak-to-peak size of a zero-mean period-2
      checkerboard added everywhere on fakes (0 disables it).
    - confound: when set, the checkerboard is instead confined to a
      class-specific column band (confound_amplitude peak-to-peak), which
      entangles the fake cue with content layout.
    - layout_shift: offsets the fake blob by this many pixels, a purely
      low-frequency cue that survives blur but not tile shuffling.
    """

    out_dir: str
    n_classes: int = 5
    train_per_class: int = 24
    test_per_class: int = 12
    image_size: int = 224
    artifact_amplitude: float = 0.12
    confound: bool = False
    confound_amplitude: float = 0.12
    layout_shift: float = 0.0
    noise: float = 0.02
    band_width: int = 28


def _class_scene_params(c: int, size: int) -> dict:
    # Geometry depends only on the class index so classes keep their
    # identity across corpus seeds.
    g = make_rng(derive_seed(9000, f"toy-class:{c}"))
    angle = 2.0 * np.pi * c / 8.0 + float(g.uniform(0, 0.5))
    center = (
        size / 2 + 0.27 * size * np.cos(angle),
        size / 2 + 0.27 * size * np.sin(angle),
    )
    tint = 0.35 + 0.25 * g.random(3)
    grad_dir = float(g.uniform(0, 2 * np.pi))
    return {
        "center": center,
        "tint": tint,
        "grad_dir": grad_dir,
        "blob_sigma": 0.16 * size,
    }


def _render_toy_image(
    spec: ToyCorpusSpec, class_index: int, label: int, rng: np.random.Generator
) -> np.ndarray:
    size = spec.image_size
    params = _class_scene_params(class_index, size)
    yy, xx = np.meshgrid(
        np.arange(size, dtype=np.float64),
        np.arange(size, dtype=np.float64),
        indexing="ij",
    )
    gx = np.cos(params["grad_dir"])
    gy = np.sin(params["grad_dir"])
    gradient = 0.08 * ((xx * gx + yy * gy) / size)
    cy, cx = params["center"][1], params["center"][0]
    cy += float(rng.uniform(-3, 3))
    cx += float(rng.uniform(-3, 3))
    if label == 1 and spec.layout_shift > 0:
        cy += spec.layout_shift
        cx += spec.layout_shift
    blob = 0.30 * np.exp(
        -((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * params["blob_sigma"] ** 2)
    )
    base = params["tint"][None, None, :] + (gradient + blob)[:, :, None]
    img = base + rng.normal(0.0, spec.noise, size=(size, size, 3))
    if label == 1:
        checker = np.where((xx + yy) % 2 == 0, 0.5, -0.5)
        if spec.confound:
            mask = np.zeros((size, size))
            start = (class_index * spec.band_width) % max(
                size - spec.band_width + 1, 1
            )
            mask[:, start : start + spec.band_width] = 1.0
            img += (spec.confound_amplitude * checker * mask)[:, :, None]
        if spec.artifact_amplitude > 0:
            img += (spec.artifact_amplitude * checker)[:, :, None]
    return np.clip(img, 0.0, 1.0)


def synth_toy_corpus(spec: ToyCorpusSpec, seed: int = 0) -> Manifest:
    """Generate the corpus on disk and return its manifest.

    Layout matches scan_real_fake_layout under <split>/<class>/<label>/, and
    the manifest is written to <out_dir>/manifest.tsv.
    """
    out = Path(spec.out_dir)
    rows = []
    plan = [("train", spec.train_per_class), ("test", spec.test_per_class)]
    for split, count in plan:
        for c in range(spec.n_classes):
            class_name = f"class{c:02d}"
            for label, sub in ((0, "0_real"), (1, "1_fake")):
                for idx in range(count):
                    rel = PurePosixPath(
                        split, class_name, sub, f"{idx:04d}.png"
                    )
                    rng = make_rng(
                        derive_seed(seed, f"toy-image:{rel}")
                    )
                    img = _render_toy_image(spec, c, label, rng)
                    save_png(
                        (img * 255.0).round().astype(np.uint8), out / rel
                    )
                    rows.append(
                        ManifestRow(
                            image_path=str(rel),
                            label=label,
                            generator_name=TOY_GENERATOR_NAME if label else "",
                            content_class=class_name,
                            split=split,
                        )
                    )
    manifest = Manifest(
        rows=rows,
        root=out,
        extras={
            "corpus": "toy-checker",
            "seed": str(seed),
            "decoder": decoder_version(),
        },
    )
    write_manifest(manifest, out / "manifest.tsv")
    return manifest
