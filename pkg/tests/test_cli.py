"""Command line surface: exit codes, artifact chaining, reruns."""

import json

import pytest
from click.testing import CliRunner

from shuffleprobe.cli import main
from shuffleprobe.detector import read_score_file
from shuffleprobe.metrics import load_report


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def ws(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        "input_size: 56\n"
        "patch_sizes: [56, 28]\n"
        "n_views: 2\n"
        "train:\n"
        "  epochs: 2\n"
        "  batch_size: 16\n"
        "  learning_rate: 0.05\n"
        "  validation_fraction: 0.0\n"
        "blur_sigmas: [1.0]\n"
        "jpeg_qualities: [50]\n"
        "dm:\n  steps: 4\n"
    )
    return tmp_path


def invoke(runner, ws, *args):
    return runner.invoke(main, ["--config", str(ws / "run.yaml"), *args])


def make_corpus(runner, ws, out="corpus", **overrides):
    args = {
        "--classes": "2",
        "--train-per-class": "3",
        "--test-per-class": "2",
        "--image-size": "56",
    }
    args.update(overrides)
    flat = [v for pair in args.items() for v in pair]
    res = invoke(runner, ws, "toy-corpus", "--out", str(ws / out), *flat)
    assert res.exit_code == 0, res.output
    return ws / out / "manifest.tsv"


def test_version_and_help(runner):
    assert runner.invoke(main, ["--version"]).exit_code == 0
    out = runner.invoke(main, ["--help"]).output
    for name in ("train", "score", "eval", "sweep", "degrade", "twins", "toy-corpus"):
        assert name in out


def test_usage_errors_exit_2(runner, ws):
    res = invoke(runner, ws, "score", "--bundle", "b", "--manifest",
                 str(ws / "nope.tsv"), "--out", "s.jsonl")
    assert res.exit_code == 2
    res = invoke(runner, ws, "train", "--manifest", str(ws / "run.yaml"),
                 "--out", str(ws / "b"), "--patch-size", "13")
    assert res.exit_code == 2
    assert "divide" in res.output


def test_runtime_errors_exit_1(runner, ws):
    # A file that exists but is not a manifest.
    res = invoke(runner, ws, "train", "--manifest", str(ws / "run.yaml"),
                 "--out", str(ws / "b"))
    assert res.exit_code == 1
    assert "Error" in res.output


def test_full_chain_train_score_eval(runner, ws):
    manifest = make_corpus(runner, ws)
    res = invoke(runner, ws, "train", "--manifest", str(manifest),
                 "--out", str(ws / "bundle"))
    assert res.exit_code == 0, res.output
    bundle = json.loads((ws / "bundle" / "bundle.json").read_text())
    assert bundle["config_digest"]
    assert {m["patch_size"] for m in bundle["members"]} == {56, 28}

    res = invoke(runner, ws, "score", "--bundle", str(ws / "bundle"),
                 "--manifest", str(manifest), "--out", str(ws / "scores.jsonl"),
                 "--workers", "2")
    assert res.exit_code == 0, res.output
    meta, records = read_score_file(ws / "scores.jsonl")
    assert meta["config_digest"] == bundle["config_digest"]
    assert len(records) == 20

    res = invoke(runner, ws, "eval", str(ws / "scores.jsonl"),
                 "--report", str(ws / "report.json"),
                 "--scatter", "28,56", "--scatter-out", str(ws / "sc.csv"),
                 "--plot-dir", str(ws / "figs"))
    assert res.exit_code == 0, res.output
    report = load_report(ws / "report.json")
    assert report.n_records == 20
    assert report.config_digest == meta["config_digest"]
    assert (ws / "figs" / "report.png").stat().st_size > 0
    assert (ws / "figs" / "scatter.png").stat().st_size > 0
    assert "config_digest" in (ws / "sc.csv").read_text()


def test_train_rerun_is_byte_identical(runner, ws):
    manifest = make_corpus(runner, ws)
    for out in ("b1", "b2"):
        res = invoke(runner, ws, "train", "--manifest", str(manifest),
                     "--out", str(ws / out), "--patch-size", "28")
        assert res.exit_code == 0, res.output
    assert (ws / "b1" / "head_28.json").read_bytes() == (
        ws / "b2" / "head_28.json"
    ).read_bytes()
    assert (ws / "b1" / "bundle.json").read_bytes() == (
        ws / "b2" / "bundle.json"
    ).read_bytes()


def test_score_empty_manifest_writes_meta_only(runner, ws):
    empty = ws / "empty.tsv"
    empty.write_text(
        "# shuffleprobe-manifest v1\n"
        "image_path\tlabel\tgenerator_name\tcontent_class\tsplit\n"
    )
    manifest = make_corpus(runner, ws)
    assert invoke(runner, ws, "train", "--manifest", str(manifest), "--out",
                  str(ws / "bundle"), "--patch-size", "28").exit_code == 0
    res = invoke(runner, ws, "score", "--bundle", str(ws / "bundle"),
                 "--manifest", str(empty), "--out", str(ws / "s.jsonl"))
    assert res.exit_code == 0, res.output
    meta, records = read_score_file(ws / "s.jsonl")
    assert records == []
    assert meta["config_digest"]


def test_score_lenient_flags_missing_files(runner, ws):
    manifest = make_corpus(runner, ws)
    assert invoke(runner, ws, "train", "--manifest", str(manifest), "--out",
                  str(ws / "bundle"), "--patch-size", "28").exit_code == 0
    victim = ws / "corpus" / "train" / "class00" / "0_real" / "0000.png"
    victim.unlink()
    strict = invoke(runner, ws, "score", "--bundle", str(ws / "bundle"),
                    "--manifest", str(manifest), "--out", str(ws / "s.jsonl"))
    assert strict.exit_code == 1
    lenient = invoke(runner, ws, "score", "--bundle", str(ws / "bundle"),
                     "--manifest", str(manifest), "--out", str(ws / "s.jsonl"),
                     "--lenient")
    assert lenient.exit_code == 0
    assert "flagged" in lenient.output
    _, records = read_score_file(ws / "s.jsonl")
    assert sum(1 for r in records if r.error) == 1


def test_eval_multiple_files_keyed_by_stem(runner, ws):
    manifest = make_corpus(runner, ws)
    assert invoke(runner, ws, "train", "--manifest", str(manifest), "--out",
                  str(ws / "bundle"), "--patch-size", "28").exit_code == 0
    for name, seed in (("clean", "0"), ("other", "9")):
        res = invoke(runner, ws, "score", "--bundle", str(ws / "bundle"),
                     "--manifest", str(manifest),
                     "--out", str(ws / f"{name}.jsonl"), "--seed", seed)
        assert res.exit_code == 0
    res = invoke(runner, ws, "eval", str(ws / "clean.jsonl"),
                 str(ws / "other.jsonl"), "--report", str(ws / "r.json"))
    assert res.exit_code == 0, res.output
    report = load_report(ws / "r.json")
    assert set(report.per_set) == {"clean", "other"}


def test_sweep_command(runner, ws):
    manifest = make_corpus(runner, ws)
    assert invoke(runner, ws, "train", "--manifest", str(manifest), "--out",
                  str(ws / "bundle")).exit_code == 0
    res = invoke(runner, ws, "sweep", "--bundle", str(ws / "bundle"),
                 "--manifest", str(manifest), "--axis", "n_views",
                 "--grid", "1,2", "--out", str(ws / "sweep.csv"),
                 "--plot", str(ws / "sweep.png"))
    assert res.exit_code == 0, res.output
    body = (ws / "sweep.csv").read_text()
    assert body.count("\n") == 4  # comment, header, two rows
    assert (ws / "sweep.png").stat().st_size > 0
    bad = invoke(runner, ws, "sweep", "--bundle", str(ws / "bundle"),
                 "--manifest", str(manifest), "--axis", "n_views",
                 "--grid", "a,b", "--out", str(ws / "x.csv"))
    assert bad.exit_code == 2


def test_degrade_command_uses_config_grids(runner, ws):
    manifest = make_corpus(runner, ws, out="small", **{
        "--classes": "1", "--train-per-class": "1", "--test-per-class": "1",
    })
    res = invoke(runner, ws, "degrade", "--manifest", str(manifest),
                 "--out", str(ws / "deg"))
    assert res.exit_code == 0, res.output
    assert (ws / "deg" / "manifest.blur-sigma1.manifest").is_file()
    assert (ws / "deg" / "manifest.jpeg-q50.manifest").is_file()
    assert "config_digest" in (
        ws / "deg" / "manifest.jpeg-q50.manifest"
    ).read_text()
    spec_res = invoke(runner, ws, "degrade", "--manifest", str(manifest),
                      "--out", str(ws / "deg2"), "--spec", "jpeg:80")
    assert spec_res.exit_code == 0
    assert list((ws / "deg2").glob("*.manifest")) == [
        ws / "deg2" / "manifest.jpeg-q80.manifest"
    ]


def test_twins_dm_command(runner, ws):
    manifest = make_corpus(runner, ws, out="small", **{
        "--classes": "1", "--train-per-class": "2", "--test-per-class": "1",
    })
    res = invoke(runner, ws, "twins", "--manifest", str(manifest),
                 "--method", "dm", "--out", str(ws / "tw"))
    assert res.exit_code == 0, res.output
    assert "degenerate-predictor: 3" in res.output
    pairs = (ws / "tw" / "pairs-dm.tsv").read_text()
    assert "config_digest" in pairs
    detection = (ws / "tw" / "twins-dm.tsv").read_text()
    assert detection.count("twinsynths-dm") == 3


def test_toy_corpus_rerun_identical(runner, ws):
    a = make_corpus(runner, ws, out="ca")
    b = make_corpus(runner, ws, out="cb")
    assert a.read_bytes() == b.read_bytes()
