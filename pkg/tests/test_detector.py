"""Multi-scale ensemble scoring: fusion algebra, determinism, artifacts."""

import json
import warnings

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from shuffleprobe import (
    AvgPoolEncoder,
    LinearHeadClassifier,
    ShuffleEnsembleDetector,
    TexturePoolEncoder,
    center_crop,
    classify,
    derive_seed,
    load_bundle,
    make_rng,
    read_score_file,
    sample_composite,
    sigmoid,
    write_score_file,
)
from shuffleprobe.errors import (
    BundleBackendMismatchError,
    ImageTooSmallError,
    IndivisiblePatchSizeError,
    ManifestError,
)
from shuffleprobe.detector import SCORES_SCHEMA, save_bundle
from conftest import make_head, make_labeled_corpus, make_photo


@pytest.fixture
def backend():
    return TexturePoolEncoder(stride=28)


@pytest.fixture
def detector(backend):
    heads = [make_head(s, backend, seed=s) for s in (224, 56, 28)]
    return ShuffleEnsembleDetector(backend, heads=heads, n_views=4, random_state=5)


def test_classify_tie_goes_to_fake():
    assert classify(0.5, 0.5) == 1
    assert classify(0.49999, 0.5) == 0
    assert classify(0.50001, 0.5) == 1


def test_constructor_validation(backend):
    good = make_head(28, backend)
    with pytest.raises(BundleBackendMismatchError):
        ShuffleEnsembleDetector(backend, heads=())
    with pytest.raises(IndivisiblePatchSizeError):
        ShuffleEnsembleDetector(backend, heads=[good, make_head(28, backend, seed=1)])
    with pytest.raises(NotFittedError):
        ShuffleEnsembleDetector(backend, heads=[LinearHeadClassifier(patch_size=28)])
    with pytest.raises(BundleBackendMismatchError):
        ShuffleEnsembleDetector(
            backend, heads=[make_head(28, backend, backend_name="avgpool-flatten")]
        )
    with pytest.raises(IndivisiblePatchSizeError):
        ShuffleEnsembleDetector(backend, heads=[make_head(96, backend)])
    wide = make_head(28, AvgPoolEncoder(stride=28))
    with pytest.raises(BundleBackendMismatchError):
        ShuffleEnsembleDetector(backend, heads=[wide])
    with pytest.raises(ValueError):
        ShuffleEnsembleDetector(backend, heads=[good], n_views=0)


def test_small_patch_warns_below_token_size(backend):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ShuffleEnsembleDetector(backend, heads=[make_head(14, backend)])
    assert any("token" in str(w.message) for w in caught)


def test_score_image_fusion_algebra(detector, backend):
    img = make_photo(224, seed=2)
    rec = detector.score_image(img, image_id="x", seed=123)
    assert set(rec.per_scale_logits) == {224, 56, 28}
    assert rec.fused_logit == pytest.approx(
        np.mean(list(rec.per_scale_logits.values())), abs=1e-12
    )
    assert rec.probability == pytest.approx(sigmoid(rec.fused_logit), abs=1e-15)
    assert rec.predicted_label == int(rec.probability >= 0.5)

    # Dual route per shuffled scale: head on the mean feature must equal the
    # mean of per-view logits, and both must equal the detector's number.
    by_size = {h.patch_size: h for h in detector.heads}
    for s in (56, 28):
        rng = make_rng(derive_seed(123, f"scale:{s}"))
        views = [sample_composite(img, s, 224, rng) for _ in range(4)]
        feats = backend.encode_batch(views)
        mean_route = by_size[s].logit(feats.mean(axis=0))
        view_route = float(np.mean([by_size[s].logit(f) for f in feats]))
        assert mean_route == pytest.approx(view_route, abs=1e-9)
        assert rec.per_scale_logits[s] == pytest.approx(mean_route, abs=1e-9)


def test_full_size_head_is_plain_center_crop_probe(backend):
    head = make_head(224, backend)
    det = ShuffleEnsembleDetector(backend, heads=[head], n_views=9)
    img = make_photo(240, seed=4)
    rec = det.score_image(img, image_id="y", seed=0)
    direct = head.logit(backend.encode(center_crop(img, 224)))
    assert rec.fused_logit == pytest.approx(direct, abs=1e-12)


def test_score_image_rejects_small_input(detector):
    with pytest.raises(ImageTooSmallError):
        detector.score_image(make_photo(128, seed=0), image_id="z", seed=0)


def test_score_manifest_deterministic_across_workers(tmp_path, detector):
    m = make_labeled_corpus(tmp_path, n_per_label=3)
    run1 = detector.score_manifest(m, master_seed=7, workers=1)
    run2 = detector.score_manifest(m, master_seed=7, workers=4)
    assert [r.image_id for r in run1] == [r.image_id for r in m.rows]
    assert run1 == run2
    f1, f2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_score_file(run1, f1, meta={"master_seed": 7})
    write_score_file(run2, f2, meta={"master_seed": 7})
    assert f1.read_bytes() == f2.read_bytes()
    # Different master seed moves shuffled-view logits.
    run3 = detector.score_manifest(m, master_seed=8, workers=1)
    assert any(
        a.per_scale_logits[28] != b.per_scale_logits[28] for a, b in zip(run1, run3)
    )


def test_score_manifest_lenient_records_failures(tmp_path, detector):
    m = make_labeled_corpus(tmp_path, n_per_label=2)
    (tmp_path / m.rows[0].image_path).unlink()
    with pytest.raises(FileNotFoundError):
        detector.score_manifest(m, master_seed=0, workers=1)
    recs = detector.score_manifest(m, master_seed=0, workers=1, strict=False)
    assert recs[0].error is not None
    assert np.isnan(recs[0].fused_logit)
    assert recs[0].predicted_label is None
    assert all(r.error is None for r in recs[1:])


def test_predict_surface(detector):
    imgs = [make_photo(224, seed=s) for s in range(3)]
    proba = detector.predict_proba(imgs)
    assert proba.shape == (3, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    labels = detector.predict(imgs)
    assert set(labels) <= {0, 1}
    logits = detector.decision_function(imgs)
    np.testing.assert_allclose(sigmoid(logits), proba[:, 1], atol=1e-12)


def test_bundle_roundtrip_preserves_scores(tmp_path, detector, backend):
    img = make_photo(224, seed=9)
    before = detector.score_image(img, image_id="r", seed=11)
    bundle_path = save_bundle(detector, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle", backend)
    after = loaded.score_image(img, image_id="r", seed=11)
    assert before == after
    meta = json.loads(bundle_path.read_text())
    assert meta["backend_name"] == backend.name
    assert len(meta["members"]) == 3


def test_bundle_backend_mismatch_on_load(tmp_path, detector):
    save_bundle(detector, tmp_path / "bundle")
    with pytest.raises(BundleBackendMismatchError):
        load_bundle(tmp_path / "bundle", AvgPoolEncoder(stride=28))


def test_score_file_roundtrip(tmp_path, detector):
    m = make_labeled_corpus(tmp_path, n_per_label=2)
    recs = detector.score_manifest(m, master_seed=3, workers=1)
    path = tmp_path / "scores.jsonl"
    write_score_file(recs, path, meta={"master_seed": 3, "note": "t"})
    meta, back = read_score_file(path)
    assert meta["schema"] == SCORES_SCHEMA
    assert meta["master_seed"] == 3
    assert back == list(recs)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + len(recs)
    assert "timestamp" not in path.read_text()
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"kind": "meta", "schema": "nope/v9"}\n')
    with pytest.raises(ManifestError):
        read_score_file(bad)
