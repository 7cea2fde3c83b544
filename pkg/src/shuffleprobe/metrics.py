"""Ranking and accuracy metrics, eval reports, and ablation sweeps.

Average precision is computed by descending-score step summation with tied
scores collapsed into one step, so permuting equal-scored records can never
move the number. Accuracy is reported with its real/fake decomposition; the
headline accuracy is always the count-weighted combination of the two
sides. Reports aggregate per generator-set and average the per-set numbers
without weighting by set size.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detector import ScoreRecord
from .errors import (
    DegenerateLabelsError,
    EmptySetError,
    IdMismatchError,
    ManifestError,
    RangeViolationError,
)

REPORT_SCHEMA = "shuffleprobe-report/v1"
SCATTER_SCHEMA = "shuffleprobe-scatter v1"


def average_precision(scores, labels) -> float:
    """Area under the precision-recall steps, ties grouped.

    scores are any real-valued rankings (higher means more fake); labels
    are 0/1 with label 1 the positive class.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.size == 0:
        raise EmptySetError("average precision over an empty set is undefined")
    if s.shape != y.shape:
        raise IdMismatchError(
            f"{s.size} scores vs {y.size} labels"
        )
    if not np.all(np.isfinite(s)):
        raise RangeViolationError("scores contain NaN or inf")
    if y.min() == y.max():
        raise DegenerateLabelsError(
            "average precision needs both a positive and a negative"
        )
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    # Last index of every tied group of scores.
    ends = np.append(np.nonzero(np.diff(ss))[0], ss.size - 1)
    tp = np.cumsum(yy)[ends].astype(np.float64)
    ranks = (ends + 1).astype(np.float64)
    precision = tp / ranks
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


@dataclass(frozen=True)
class AccuracyBreakdown:
    accuracy: float
    real_accuracy: float | None
    fake_accuracy: float | None
    n_real: int
    n_fake: int


def accuracy(
    probabilities, labels, threshold: float = 0.5
) -> AccuracyBreakdown:
    """Thresholded accuracy with per-side decomposition.

    A probability equal to the threshold classifies as fake. A side with no
    members reports None; the overall number is always the count-weighted
    mix of the sides that exist.
    """
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if p.size == 0:
        raise EmptySetError("accuracy over an empty set is undefined")
    if p.shape != y.shape:
        raise IdMismatchError(f"{p.size} probabilities vs {y.size} labels")
    pred = (p >= threshold).astype(np.int64)
    real, fake = y == 0, y == 1
    real_acc = float((pred[real] == 0).mean()) if real.any() else None
    fake_acc = float((pred[fake] == 1).mean()) if fake.any() else None
    total = float((pred == y).mean())
    return AccuracyBreakdown(
        accuracy=total,
        real_accuracy=real_acc,
        fake_accuracy=fake_acc,
        n_real=int(real.sum()),
        n_fake=int(fake.sum()),
    )


def _clean_records(records: list[ScoreRecord]) -> list[ScoreRecord]:
    kept = [
        r
        for r in records
        if r.error is None
        and r.true_label is not None
        and np.isfinite(r.probability)
    ]
    dropped = len(records) - len(kept)
    if dropped:
        warnings.warn(
            f"dropping {dropped} record(s) with errors or missing labels",
            stacklevel=3,
        )
    return kept


def per_class_accuracy(
    records: list[ScoreRecord],
    classes: list[str] | None = None,
    threshold: float = 0.5,
) -> dict[str, float]:
    """Accuracy grouped by content class; the content-bias diagnostic.

    Records without a content class are skipped with a warning. An explicit
    empty class list yields an empty map.
    """
    if classes is not None and not classes:
        return {}
    usable = _clean_records(records)
    unlabeled = [r for r in usable if not r.content_class]
    if unlabeled:
        warnings.warn(
            f"skipping {len(unlabeled)} record(s) without a content class",
            stacklevel=2,
        )
    by_class: dict[str, list[ScoreRecord]] = {}
    for r in usable:
        if not r.content_class:
            continue
        if classes is not None and r.content_class not in classes:
            continue
        by_class.setdefault(r.content_class, []).append(r)
    out = {}
    for name in sorted(by_class):
        group = by_class[name]
        out[name] = accuracy(
            [r.probability for r in group],
            [r.true_label for r in group],
            threshold,
        ).accuracy
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetMetrics:
    ap: float
    accuracy: float
    real_accuracy: float | None
    fake_accuracy: float | None
    n_real: int
    n_fake: int


@dataclass
class EvalReport:
    per_set: dict[str, SetMetrics] = field(default_factory=dict)
    mean_ap: float = float("nan")
    mean_accuracy: float = float("nan")
    per_class: dict[str, float] = field(default_factory=dict)
    n_records: int = 0
    n_dropped: int = 0
    threshold: float = 0.5
    config_digest: str = ""
    decoder: str = ""

    def lines(self) -> list[str]:
        out = [f"sets: {len(self.per_set)}  records: {self.n_records}"]
        for name, m in sorted(self.per_set.items()):
            out.append(
                f"  {name}: AP {m.ap:.4f}  acc {m.accuracy:.4f}"
                f" (real {_fmt(m.real_accuracy)} / fake {_fmt(m.fake_accuracy)})"
            )
        out.append(
            f"  mean: AP {self.mean_ap:.4f}  acc {self.mean_accuracy:.4f}"
        )
        return out


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _group_by_generator(records: list[ScoreRecord]) -> dict[str, list[ScoreRecord]]:
    fake_names = sorted({r.generator_name for r in records if r.true_label == 1})
    if len(fake_names) <= 1:
        name = fake_names[0] if fake_names and fake_names[0] else "all"
        return {name: records}
    # Mixed file: each generator keeps its fakes; reals are shared controls.
    reals = [r for r in records if r.true_label == 0]
    groups = {}
    for name in fake_names:
        fakes = [
            r
            for r in records
            if r.true_label == 1 and r.generator_name == name
        ]
        groups[name or "unnamed"] = reals + fakes
    return groups


def build_report(
    record_sets: dict[str, list[ScoreRecord]] | list[ScoreRecord],
    threshold: float = 0.5,
    config_digest: str = "",
    decoder: str = "",
) -> EvalReport:
    """Aggregate score records into the eval report.

    Accepts one record list (grouped by fake generator name) or an explicit
    mapping of set name to records. Mean rows are unweighted means over
    sets.
    """
    if isinstance(record_sets, list):
        record_sets = _group_by_generator(record_sets)
    report = EvalReport(
        threshold=threshold, config_digest=config_digest, decoder=decoder
    )
    all_records: list[ScoreRecord] = []
    for name, records in sorted(record_sets.items()):
        usable = _clean_records(records)
        report.n_dropped += len(records) - len(usable)
        if not usable:
            raise EmptySetError(f"set {name!r} holds no usable records")
        all_records.extend(usable)
        probs = [r.probability for r in usable]
        labels = [r.true_label for r in usable]
        acc = accuracy(probs, labels, threshold)
        report.per_set[name] = SetMetrics(
            ap=average_precision([r.fused_logit for r in usable], labels),
            accuracy=acc.accuracy,
            real_accuracy=acc.real_accuracy,
            fake_accuracy=acc.fake_accuracy,
            n_real=acc.n_real,
            n_fake=acc.n_fake,
        )
    report.n_records = len(all_records)
    sets = report.per_set.values()
    report.mean_ap = float(np.mean([m.ap for m in sets]))
    report.mean_accuracy = float(np.mean([m.accuracy for m in sets]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report.per_class = per_class_accuracy(all_records, threshold=threshold)
    return report


def save_report(report: EvalReport, path: str | Path) -> Path:
    payload = {"schema": REPORT_SCHEMA}
    payload.update(asdict(report))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return path


def load_report(path: str | Path) -> EvalReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.pop("schema", None) != REPORT_SCHEMA:
        raise ManifestError(f"{path} is not a {REPORT_SCHEMA} file")
    data["per_set"] = {
        k: SetMetrics(**v) for k, v in data.get("per_set", {}).items()
    }
    return EvalReport(**data)


# ---------------------------------------------------------------------------
# Scatter export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScatterPoint:
    image_id: str
    x: float
    y: float
    true_label: int | None


def export_scatter(
    records_x: list[ScoreRecord],
    records_y: list[ScoreRecord],
    scale_x: int,
    scale_y: int,
) -> list[ScatterPoint]:
    """Join two record sets on image id into (x, y) logit pairs.

    x comes from records_x at scale_x, y from records_y at scale_y. The two
    sets must cover exactly the same ids.
    """
    by_id = {r.image_id: r for r in records_y}
    ids_x = {r.image_id for r in records_x}
    if ids_x != set(by_id) or len(ids_x) != len(records_x):
        missing = sorted(ids_x.symmetric_difference(by_id))[:5]
        raise IdMismatchError(
            f"record sets do not cover the same image ids "
            f"(first differences: {missing})"
        )
    points = []
    for rx in records_x:
        ry = by_id[rx.image_id]
        try:
            x = rx.per_scale_logits[scale_x]
            y = ry.per_scale_logits[scale_y]
        except KeyError as exc:
            raise ManifestError(
                f"record {rx.image_id} lacks a logit at scale {exc}"
            ) from None
        points.append(
            ScatterPoint(
                image_id=rx.image_id, x=x, y=y, true_label=rx.true_label
            )
        )
    return points


def write_scatter_csv(
    points: list[ScatterPoint],
    path: str | Path,
    scale_x: int,
    scale_y: int,
    extras: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# {SCATTER_SCHEMA}",
        f"# x: logit[s={scale_x}]",
        f"# y: logit[s={scale_y}]",
    ]
    for key in sorted(extras or {}):
        lines.append(f"# {key}: {extras[key]}")
    lines.append("image_id,x,y,true_label")
    for p in points:
        label = "" if p.true_label is None else str(p.true_label)
        lines.append(f"{p.image_id},{p.x!r},{p.y!r},{label}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    mean_ap: float
    mean_accuracy: float
    seconds_per_image: float


def sweep(
    axis: str,
    grid,
    *,
    manifest,
    backend,
    heads,
    n_views: int = 10,
    threshold: float = 0.5,
    master_seed: int = 0,
    workers: int = 1,
) -> list[SweepPoint]:
    """Score the same manifest once per grid value and tabulate quality
    against wall time.

    axis "n_views" varies the view count over a fixed head ensemble; axis
    "patch_size" scores a single-head detector per tile size (heads must
    map every grid value). Seeds derive from the same master seed at every
    grid point, so only the swept knob moves.
    """
    from .detector import ShuffleEnsembleDetector

    if axis not in ("n_views", "patch_size"):
        raise ValueError(f"axis must be n_views or patch_size, got {axis!r}")
    head_map = {h.patch_size: h for h in heads}
    points = []
    for value in grid:
        if axis == "n_views":
            det = ShuffleEnsembleDetector(
                backend=backend,
                heads=tuple(head_map.values()),
                n_views=int(value),
                threshold=threshold,
            )
        else:
            if int(value) not in head_map:
                raise ManifestError(
                    f"no trained head for patch size {value}; "
                    f"have {sorted(head_map)}"
                )
            det = ShuffleEnsembleDetector(
                backend=backend,
                heads=(head_map[int(value)],),
                n_views=n_views,
                threshold=threshold,
            )
        t0 = time.perf_counter()
        records = det.score_manifest(
            manifest, master_seed=master_seed, workers=workers
        )
        elapsed = time.perf_counter() - t0
        report = build_report(records, threshold=threshold)
        points.append(
            SweepPoint(
                axis=axis,
                value=float(value),
                mean_ap=report.mean_ap,
                mean_accuracy=report.mean_accuracy,
                seconds_per_image=elapsed / max(len(records), 1),
            )
        )
    return points


def write_sweep_csv(
    points: list[SweepPoint], path: str | Path, extras: dict | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {key}: {(extras or {})[key]}" for key in sorted(extras or {})]
    lines.append("axis,value,mean_ap,mean_accuracy,seconds_per_image")
    for p in points:
        lines.append(
            f"{p.axis},{p.value!r},{p.mean_ap!r},"
            f"{p.mean_accuracy!r},{p.seconds_per_image!r}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
