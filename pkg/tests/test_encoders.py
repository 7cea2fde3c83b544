"""Toy backend semantics, exact linearity, and loader error paths."""

import numpy as np
import pytest

from shuffleprobe import AvgPoolEncoder, BackendSpec, TexturePoolEncoder, load_backend
from shuffleprobe.encoders import _resolve_weights_file
from shuffleprobe.errors import (
    ChecksumMismatchError,
    RangeViolationError,
    SizeMismatchError,
    WeightsNotFoundError,
)
from conftest import make_photo


def test_avgpool_analytic_dimension():
    assert AvgPoolEncoder(stride=32).feature_dim == 3 * 7 * 7
    assert AvgPoolEncoder(stride=28).feature_dim == 3 * 8 * 8
    assert TexturePoolEncoder(stride=28).feature_dim == 6 * 8 * 8
    with pytest.raises(SizeMismatchError):
        AvgPoolEncoder(stride=30)
    with pytest.raises(SizeMismatchError):
        TexturePoolEncoder(stride=27, input_size=216)


def test_avgpool_known_values():
    enc = AvgPoolEncoder(stride=112, input_size=224)
    img = np.zeros((224, 224, 3))
    img[:112, :112] = (0.25, 0.5, 0.75)  # one block per quadrant
    feats = enc.encode(img).reshape(2, 2, 3)
    np.testing.assert_allclose(feats[0, 0], [0.25, 0.5, 0.75], atol=1e-12)
    np.testing.assert_allclose(feats[0, 1], 0.0, atol=1e-12)


def test_checker_channel_sees_checkerboard_and_means_do_not():
    enc = TexturePoolEncoder(stride=28)
    yy, xx = np.meshgrid(np.arange(224), np.arange(224), indexing="ij")
    flat = np.full((224, 224, 3), 0.5)
    checker = flat + np.where((xx + yy) % 2 == 0, 0.06, -0.06)[:, :, None]
    f_flat = enc.encode(flat)
    f_check = enc.encode(checker)
    half = enc.feature_dim // 2
    # Means match: the added pattern is zero-mean in every block.
    np.testing.assert_allclose(f_check[:half], f_flat[:half], atol=1e-12)
    # Checker channels light up at exactly the added amplitude.
    np.testing.assert_allclose(f_check[half:], f_flat[half:] + 0.06, atol=1e-12)
    np.testing.assert_allclose(f_flat[half:], 0.0, atol=1e-12)


def test_exact_linearity_of_toy_backends():
    for enc in (AvgPoolEncoder(stride=28), TexturePoolEncoder(stride=28)):
        assert enc.is_linear
        x = make_photo(224, seed=1, dtype=np.float64)
        y = make_photo(224, seed=2, dtype=np.float64)
        for a in (0.0, 0.3, 1.0):
            mix = a * x + (1 - a) * y
            np.testing.assert_allclose(
                enc.encode(mix),
                a * enc.encode(x) + (1 - a) * enc.encode(y),
                atol=1e-12,
            )


def test_mean_of_images_equals_mean_of_features():
    enc = TexturePoolEncoder(stride=28)
    imgs = [make_photo(224, seed=s, dtype=np.float64) for s in range(6)]
    mean_img = np.mean(imgs, axis=0)
    np.testing.assert_allclose(
        enc.encode(mean_img),
        enc.encode_batch(imgs).mean(axis=0),
        atol=1e-12,
    )


def test_uint8_and_float_inputs_agree():
    enc = AvgPoolEncoder(stride=28)
    img8 = make_photo(224, seed=3)
    np.testing.assert_allclose(
        enc.encode(img8), enc.encode(img8.astype(np.float64) / 255.0), atol=1e-12
    )


def test_encode_validates_size_and_range():
    enc = AvgPoolEncoder(stride=28)
    with pytest.raises(SizeMismatchError):
        enc.encode(make_photo(96, seed=0))
    with pytest.raises(RangeViolationError):
        enc.encode(np.full((224, 224, 3), 1.5))


def test_encode_batch_preserves_order():
    enc = AvgPoolEncoder(stride=28)
    imgs = [make_photo(224, seed=s) for s in (4, 5)]
    batch = enc.encode_batch(imgs)
    np.testing.assert_array_equal(batch[0], enc.encode(imgs[0]))
    np.testing.assert_array_equal(batch[1], enc.encode(imgs[1]))


def test_load_backend_registry(tmp_path):
    enc = load_backend(BackendSpec(name="avgpool-texture", stride=56))
    assert enc.name == "avgpool-texture" and enc.feature_dim == 6 * 16
    assert enc.token_size == 56
    assert load_backend(BackendSpec(name="avgpool-flatten")).describe()[
        "feature_dim"
    ] == 192
    with pytest.raises(ValueError, match="unknown backend"):
        load_backend(BackendSpec(name="resnet50"))
    with pytest.raises(WeightsNotFoundError):
        load_backend(BackendSpec(name="clip-vit-l14"))
    with pytest.raises(WeightsNotFoundError):
        load_backend(
            BackendSpec(name="clip-vit-l14", weights=str(tmp_path / "missing"))
        )


def test_weight_checksum_is_verified_before_load(tmp_path):
    weights = tmp_path / "model.safetensors"
    weights.write_bytes(b"not really weights")
    with pytest.raises(ChecksumMismatchError):
        load_backend(
            BackendSpec(
                name="clip-vit-l14", weights=str(weights), sha256="00" * 32
            )
        )


def test_weights_dir_without_model_file(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(WeightsNotFoundError):
        _resolve_weights_file(tmp_path / "empty")
