"""Shared fixtures: synthetic photo-like images and tiny corpora."""

import numpy as np
import pytest

from shuffleprobe import make_rng


def make_photo(size: int = 96, seed: int = 0, dtype=np.uint8) -> np.ndarray:
    """Smooth blobs plus gradients plus mild grain; no flat regions.

    Stands in for a natural photo wherever codecs or blurs need realistic
    local statistics.
    """
    rng = make_rng(seed)
    yy, xx = np.meshgrid(
        np.arange(size, dtype=np.float64),
        np.arange(size, dtype=np.float64),
        indexing="ij",
    )
    img = np.zeros((size, size, 3))
    for _ in range(4):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        sig = rng.uniform(0.08 * size, 0.25 * size)
        amp = rng.uniform(0.15, 0.35, size=3)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig**2))
        img += blob[:, :, None] * amp[None, None, :]
    img += (0.2 * xx / size + 0.15 * yy / size)[:, :, None]
    img += rng.normal(0, 0.015, size=img.shape)
    img = 0.08 + 0.84 * (img - img.min()) / (img.max() - img.min())
    if dtype == np.uint8:
        return np.rint(img * 255).astype(np.uint8)
    return img.astype(dtype)


def make_labeled_corpus(root, n_per_label=4, size=224, bump=12, split="train"):
    """Write a tiny real/fake corpus with a planted checker cue on fakes.

    Returns a Manifest whose rows point at freshly written PNGs under root.
    """
    from shuffleprobe import Manifest, ManifestRow
    from shuffleprobe.manifest import save_png

    yy, xx = np.meshgrid(range(size), range(size), indexing="ij")
    checker = np.where((xx + yy) % 2 == 0, bump, -bump)[:, :, None]
    rows = []
    for label in (0, 1):
        for i in range(n_per_label):
            img = make_photo(size, seed=500 * label + i)
            if label == 1:
                img = np.clip(img.astype(int) + checker, 0, 255).astype(np.uint8)
            rel = f"{split}/{label}/{i:02d}.png"
            save_png(img, root / rel)
            rows.append(
                ManifestRow(
                    image_path=rel,
                    label=label,
                    generator_name="toy-checker" if label else "",
                    content_class="c0",
                    split=split,
                )
            )
    return Manifest(rows=rows, root=root)


def make_head(patch_size, backend, seed=0, backend_name=None):
    """A fitted-looking linear head with small random weights; no training."""
    from shuffleprobe import LinearHeadClassifier

    rng = make_rng(seed)
    clf = LinearHeadClassifier(
        patch_size=patch_size,
        backend_name=backend_name or backend.name,
    )
    clf.coef_ = rng.normal(0, 0.05, size=backend.feature_dim)
    clf.intercept_ = float(rng.normal(0, 0.1))
    clf.classes_ = np.array([0, 1])
    clf.n_features_in_ = backend.feature_dim
    clf.loss_trace_ = []
    clf.n_epochs_run_ = 0
    return clf


@pytest.fixture
def photo():
    return make_photo(size=96, seed=3)


@pytest.fixture
def photo224():
    return make_photo(size=224, seed=11)
