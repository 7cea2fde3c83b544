"""Operator command line: train, score, eval, sweep, degrade, twins.

Every command is re-runnable: the same inputs and seed produce byte-equal
artifacts, and every artifact embeds the digest of the configuration that
produced it. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import functools
import math
from pathlib import Path

import click

from . import __version__
from .config import ProjectConfig, load_config
from .degrade import DegradeSpec, apply_degradation_sweep
from .detector import (
    ShuffleEnsembleDetector,
    load_bundle,
    read_score_file,
    save_bundle,
    write_score_file,
)
from .encoders import BackendSpec, load_backend
from .errors import ShuffleProbeError
from .heads import train_head_on_manifest
from .manifest import (
    ToyCorpusSpec,
    decoder_version,
    read_manifest,
    synth_toy_corpus,
    validate_manifest,
    write_manifest,
)
from .metrics import (
    build_report,
    export_scatter,
    save_report,
    sweep as run_sweep,
    write_scatter_csv,
    write_sweep_csv,
)
from .twins import (
    DdimSchedule,
    GanFitConfig,
    ZeroNoisePredictor,
    build_twinsynths,
    linear_alpha_schedule,
    pairs_to_manifest,
)


def fail_on_runtime_errors(f):
    """Map pipeline failures to exit 1; click owns usage errors (exit 2)."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ShuffleProbeError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _backend_from(cfg: ProjectConfig):
    return load_backend(
        BackendSpec(
            name=cfg.backend,
            stride=cfg.backend_stride,
            input_size=cfg.input_size,
            weights=cfg.backend_weights,
            sha256=cfg.backend_sha256,
        )
    )


@click.group()
@click.option(
    "--config",
    "config_path",
    envvar="SHUFFLEPROBE_CONFIG",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="YAML run configuration (or set SHUFFLEPROBE_CONFIG).",
)
@click.version_option(version=__version__, prog_name="shuffleprobe")
@click.pass_context
def main(ctx, config_path):
    """Detect AI-generated images by probing shuffled tiles."""
    ctx.obj = load_config(config_path)


@main.command("toy-corpus")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--classes", "n_classes", default=5, show_default=True)
@click.option("--train-per-class", default=24, show_default=True)
@click.option("--test-per-class", default=12, show_default=True)
@click.option("--image-size", default=224, show_default=True)
@click.option("--artifact-amplitude", default=0.12, show_default=True)
@click.option("--confound/--no-confound", default=False, show_default=True)
@click.option("--confound-amplitude", default=0.12, show_default=True)
@click.option("--layout-shift", default=0.0, show_default=True)
@click.option("--noise", default=0.02, show_default=True)
@click.pass_obj
@fail_on_runtime_errors
def cmd_toy_corpus(cfg, out, seed, n_classes, train_per_class, test_per_class,
                   image_size, artifact_amplitude, confound, confound_amplitude,
                   layout_shift, noise):
    """Generate the planted-artifact corpus for pipeline checks."""
    spec = ToyCorpusSpec(
        out_dir=out,
        n_classes=n_classes,
        train_per_class=train_per_class,
        test_per_class=test_per_class,
        image_size=image_size,
        artifact_amplitude=artifact_amplitude,
        confound=confound,
        confound_amplitude=confound_amplitude,
        layout_shift=layout_shift,
        noise=noise,
    )
    manifest = synth_toy_corpus(spec, seed=seed)
    click.echo(f"wrote {len(manifest.rows)} images under {out}")
    click.echo(f"manifest: {Path(out) / 'manifest.tsv'}")


@main.command("validate")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--min-size", default=None, type=int)
@click.pass_obj
@fail_on_runtime_errors
def cmd_validate(cfg, manifest, min_size):
    """Check a manifest's files exist, decode, and meet the size floor."""
    report = validate_manifest(read_manifest(manifest), min_size=min_size)
    for line in report.lines():
        click.echo(line)
    if not report.ok:
        raise click.ClickException(
            f"{len(report.hard_issues)} hard issue(s) found"
        )


@main.command("train")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Bundle directory to create.")
@click.option("--patch-size", "patch_sizes", multiple=True, type=int,
              help="Tile size to train a head for; repeatable. "
                   "Defaults to the configured sizes.")
@click.option("--seed", default=None, type=int, help="Override the configured seed.")
@click.option("--split", default="train", show_default=True,
              help="Manifest split to train on ('' uses every row).")
@click.pass_obj
@fail_on_runtime_errors
def cmd_train(cfg, manifest, out, patch_sizes, seed, split):
    """Train one linear head per tile size and save them as a bundle."""
    sizes = list(patch_sizes) or list(cfg.patch_sizes)
    for s in sizes:
        if s <= 0 or cfg.input_size % s:
            raise click.UsageError(
                f"patch size {s} does not divide the input size {cfg.input_size}"
            )
    seed = cfg.seed if seed is None else seed
    backend = _backend_from(cfg)
    rows = read_manifest(manifest)
    if split:
        rows = rows.filter(split=split)
    heads = []
    for s in sizes:
        head = train_head_on_manifest(
            rows,
            backend,
            s,
            learning_rate=cfg.train.learning_rate,
            batch_size=cfg.train.batch_size,
            epochs=cfg.train.epochs,
            optimizer=cfg.train.optimizer,
            views_per_epoch=cfg.train.views_per_epoch,
            validation_fraction=cfg.train.validation_fraction,
            patience=cfg.train.patience,
            threshold=cfg.threshold,
            seed=seed,
        )
        heads.append(head)
        click.echo(
            f"head s={s}: {head.n_epochs_run_} epoch(s), "
            f"final loss {head.loss_trace_[-1]:.4f}"
        )
    detector = ShuffleEnsembleDetector(
        backend=backend,
        heads=tuple(heads),
        n_views=cfg.n_views,
        threshold=cfg.threshold,
    )
    path = save_bundle(detector, out, extras={"config_digest": cfg.digest()})
    click.echo(f"bundle: {path}")


@main.command("score")
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", default=1, show_default=True)
@click.option("--seed", default=None, type=int, help="Override the configured seed.")
@click.option("--lenient", is_flag=True,
              help="Record per-image failures instead of aborting.")
@click.pass_obj
@fail_on_runtime_errors
def cmd_score(cfg, bundle, manifest, out, workers, seed, lenient):
    """Score every manifest row with a trained bundle."""
    backend = _backend_from(cfg)
    detector = load_bundle(bundle, backend)
    rows = read_manifest(manifest)
    seed = cfg.seed if seed is None else seed
    records = detector.score_manifest(
        rows, master_seed=seed, workers=workers, strict=not lenient
    )
    failures = sum(1 for r in records if r.error is not None)
    write_score_file(
        records,
        out,
        meta={
            "config_digest": cfg.digest(),
            "master_seed": seed,
            "backend_name": backend.name,
            "n_views": detector.n_views,
            "threshold": detector.threshold,
            "decoder": decoder_version(),
            "manifest": Path(manifest).name,
        },
    )
    click.echo(f"scored {len(records)} image(s) -> {out}")
    if failures:
        click.echo(f"warning: {failures} image(s) failed and were flagged", err=True)


def _parse_scales(text):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise click.UsageError(
            f"--scatter wants two comma-separated tile sizes, got {text!r}"
        )
    return x, y


@main.command("eval")
@click.argument("score_files", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_out", default=None, type=click.Path(dir_okay=False),
              help="Report JSON destination (default: alongside first input).")
@click.option("--scatter", default=None,
              help="Export per-image logit pairs at 'SX,SY' tile sizes.")
@click.option("--scatter-out", default=None, type=click.Path(dir_okay=False))
@click.option("--plot-dir", default=None, type=click.Path(file_okay=False),
              help="Render static figures here.")
@click.pass_obj
@fail_on_runtime_errors
def cmd_eval(cfg, score_files, report_out, scatter, scatter_out, plot_dir):
    """Aggregate score files into a report, with optional scatter export.

    One file evaluates per fake generator. Several files evaluate side by
    side, keyed by file stem, which is how degraded reruns are compared.
    """
    loaded = [(Path(p), *read_score_file(p)) for p in score_files]
    if len(loaded) == 1:
        record_sets = loaded[0][2]
    else:
        record_sets = {path.stem: records for path, _, records in loaded}
    report = build_report(
        record_sets,
        threshold=cfg.threshold,
        config_digest=cfg.digest(),
        decoder=decoder_version(),
    )
    report_out = Path(report_out or loaded[0][0].with_suffix(".report.json"))
    save_report(report, report_out)
    for line in report.lines():
        click.echo(line)
    click.echo(f"report: {report_out}")

    points = None
    if scatter:
        sx, sy = _parse_scales(scatter)
        recs_x = loaded[0][2]
        recs_y = loaded[1][2] if len(loaded) > 1 else loaded[0][2]
        points = export_scatter(recs_x, recs_y, sx, sy)
        scatter_out = Path(scatter_out or loaded[0][0].with_suffix(".scatter.csv"))
        write_scatter_csv(
            points, scatter_out, sx, sy, extras={"config_digest": cfg.digest()}
        )
        click.echo(f"scatter: {scatter_out}")

    if plot_dir:
        plot_dir = Path(plot_dir)
        plot_dir.mkdir(parents=True, exist_ok=True)
        _plot_report(report, plot_dir / "report.png")
        if points is not None:
            _plot_scatter(points, plot_dir / "scatter.png", cfg.threshold, scatter)
        click.echo(f"plots: {plot_dir}")


@main.command("sweep")
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", required=True,
              type=click.Choice(["n_views", "patch_size"]))
@click.option("--grid", required=True,
              help="Comma-separated values, e.g. 1,2,5,10.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", default=1, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--plot", default=None, type=click.Path(dir_okay=False))
@click.pass_obj
@fail_on_runtime_errors
def cmd_sweep(cfg, bundle, manifest, axis, grid, out, workers, seed, plot):
    """Score the same manifest across a grid of one knob."""
    try:
        values = [int(v) for v in grid.split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"--grid must be comma-separated integers, got {grid!r}")
    if not values:
        raise click.UsageError("--grid is empty")
    backend = _backend_from(cfg)
    detector = load_bundle(bundle, backend)
    points = run_sweep(
        axis,
        values,
        manifest=read_manifest(manifest),
        backend=backend,
        heads=detector.heads,
        n_views=cfg.n_views,
        threshold=cfg.threshold,
        master_seed=cfg.seed if seed is None else seed,
        workers=workers,
    )
    write_sweep_csv(points, out, extras={"config_digest": cfg.digest()})
    for p in points:
        click.echo(
            f"{axis}={p.value:g}: AP {p.mean_ap:.4f}  acc {p.mean_accuracy:.4f}"
            f"  {p.seconds_per_image * 1e3:.1f} ms/image"
        )
    click.echo(f"table: {out}")
    if plot:
        _plot_sweep(points, Path(plot))
        click.echo(f"plot: {plot}")


@main.command("degrade")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--spec", "specs", multiple=True,
              help="Degradation like blur:2.0 or jpeg:90; repeatable. "
                   "Defaults to the configured grids.")
@click.pass_obj
@fail_on_runtime_errors
def cmd_degrade(cfg, manifest, out, specs):
    """Materialize blurred and recompressed copies of a corpus."""
    if specs:
        parsed = [DegradeSpec.parse(s) for s in specs]
    else:
        parsed = [DegradeSpec("blur", v) for v in cfg.blur_sigmas]
        parsed += [DegradeSpec("jpeg", q) for q in cfg.jpeg_qualities]
    if not parsed:
        click.echo("nothing to do: no degradations configured")
        return
    outcome = apply_degradation_sweep(
        manifest, parsed, out, extras={"config_digest": cfg.digest()}
    )
    click.echo(
        f"wrote {outcome.written} file(s), kept {outcome.skipped} unchanged"
    )
    for tag in sorted(outcome.manifests):
        click.echo(f"  {tag}: {outcome.manifests[tag]}")


@main.command("twins")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", required=True, type=click.Choice(["gan", "dm"]))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=None, type=int)
@click.option("--include-flagged", is_flag=True,
              help="Keep below-gate pairs in the detection manifest.")
@click.pass_obj
@fail_on_runtime_errors
def cmd_twins(cfg, manifest, method, out, seed, include_flagged):
    """Build matched real/fake twins for every real manifest row."""
    rows = read_manifest(manifest)
    seed = cfg.seed if seed is None else seed
    kwargs = {}
    if method == "gan":
        depth = int(math.log2(cfg.gan.target_size / 4))
        kwargs["gan_config"] = GanFitConfig(
            latent_dim=cfg.gan.latent_dim,
            channels=tuple(256 >> i for i in range(depth)),
            target_size=cfg.gan.target_size,
            steps=cfg.gan.steps,
            learning_rate=cfg.gan.learning_rate,
            psnr_gate=cfg.gan.psnr_gate,
        )
    else:
        kwargs["schedule"] = DdimSchedule(
            linear_alpha_schedule(cfg.dm.steps, cfg.dm.beta_start, cfg.dm.beta_end)
        )
        kwargs["predictor"] = ZeroNoisePredictor()
        kwargs["psnr_gate"] = cfg.dm.psnr_gate
    pairs = build_twinsynths(
        rows, method, out, seed=seed,
        extras={"config_digest": cfg.digest()}, **kwargs,
    )
    by_status: dict[str, int] = {}
    for p in pairs:
        by_status[p.status] = by_status.get(p.status, 0) + 1
    for status in sorted(by_status):
        click.echo(f"{status}: {by_status[status]}")
    detection = pairs_to_manifest(pairs, out, include_flagged=include_flagged)
    detection.extras["config_digest"] = cfg.digest()
    mpath = Path(out) / f"twins-{method}.tsv"
    write_manifest(detection, mpath)
    click.echo(f"pairs: {Path(out) / f'pairs-{method}.tsv'}")
    click.echo(f"detection manifest: {mpath}")


# ---------------------------------------------------------------------------
# Figures (static, Agg only)
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _plot_scatter(points, path, threshold, scales):
    plt = _pyplot()
    boundary = math.log(threshold / (1.0 - threshold))
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, color, name in ((0, "tab:blue", "real"), (1, "tab:red", "fake")):
        xs = [p.x for p in points if p.true_label == label]
        ys = [p.y for p in points if p.true_label == label]
        ax.scatter(xs, ys, s=12, alpha=0.6, color=color, label=name)
    lo = min(min((p.x for p in points), default=0), min((p.y for p in points), default=0))
    hi = max(max((p.x for p in points), default=1), max((p.y for p in points), default=1))
    ax.plot([lo, hi], [lo, hi], lw=0.8, color="gray", ls=":")
    ax.axhline(boundary, lw=0.8, color="black", ls="--")
    ax.axvline(boundary, lw=0.8, color="black", ls="--")
    sx, sy = scales.split(",")
    ax.set_xlabel(f"logit at s={sx}")
    ax.set_ylabel(f"logit at s={sy}")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_report(report, path):
    plt = _pyplot()
    names = sorted(report.per_set)
    aps = [report.per_set[n].ap for n in names]
    accs = [report.per_set[n].accuracy for n in names]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 4))
    ax.bar([i - 0.2 for i in x], aps, width=0.4, label="AP")
    ax.bar([i + 0.2 for i in x], accs, width=0.4, label="accuracy")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_sweep(points, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([p.value for p in points], [p.mean_ap for p in points],
            marker="o", label="mean AP")
    ax.plot([p.value for p in points], [p.mean_accuracy for p in points],
            marker="s", label="mean accuracy")
    ax.set_xlabel(points[0].axis if points else "value")
    ax.set_ylabel("score")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


if __name__ == "__main__":
    main()
