"""Config loading and canonical digests."""

import pytest

from shuffleprobe import ProjectConfig, load_config
from shuffleprobe.config import TrainSettings, canonical_digest
from shuffleprobe.errors import ManifestError


def test_digest_is_stable_and_sensitive():
    a, b = ProjectConfig(), ProjectConfig()
    assert a.digest() == b.digest()
    assert len(a.digest()) == 64
    assert ProjectConfig(n_views=3).digest() != a.digest()
    assert ProjectConfig(train=TrainSettings(epochs=5)).digest() != a.digest()


def test_canonical_digest_ignores_key_order():
    assert canonical_digest({"a": 1, "b": [2, 3]}) == canonical_digest(
        {"b": [2, 3], "a": 1}
    )


def test_load_defaults_and_yaml(tmp_path):
    assert load_config(None) == ProjectConfig()
    doc = tmp_path / "run.yaml"
    doc.write_text(
        "backend: avgpool-flatten\n"
        "patch_sizes: [112, 28]\n"
        "n_views: 4\n"
        "train:\n  epochs: 3\n  optimizer: sgd\n"
        "gan:\n  steps: 100\n"
    )
    cfg = load_config(doc)
    assert cfg.backend == "avgpool-flatten"
    assert cfg.patch_sizes == (112, 28)
    assert cfg.train.epochs == 3
    assert cfg.train.optimizer == "sgd"
    assert cfg.train.batch_size == 256  # untouched default
    assert cfg.gan.steps == 100
    assert cfg.digest() != ProjectConfig().digest()


def test_load_rejects_unknown_keys(tmp_path):
    doc = tmp_path / "bad.yaml"
    doc.write_text("views: 10\n")
    with pytest.raises(ManifestError, match="views"):
        load_config(doc)
    doc.write_text("train:\n  lr: 0.1\n")
    with pytest.raises(ManifestError, match="lr"):
        load_config(doc)
    doc.write_text("- just\n- a list\n")
    with pytest.raises(ManifestError, match="mapping"):
        load_config(doc)
