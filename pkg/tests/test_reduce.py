import logging

import numpy as np
import pytest

from qdistill import reduce as red
from qdistill.errors import ConfigError, ShapeError, StateError


def projector(cols):
    q, _ = np.linalg.qr(cols)
    return q @ q.T


def test_center_crop_picks_middle():
    img = np.arange(36.0).reshape(6, 6)
    np.testing.assert_array_equal(red.reduce_center_crop(img, 2), [14, 15, 20, 21])


def test_center_crop_28_to_4():
    img = np.zeros((28, 28))
    img[12:16, 12:16] = 1.0
    assert red.reduce_center_crop(img, 4).sum() == 16


def test_center_crop_too_large():
    with pytest.raises(ShapeError):
        red.reduce_center_crop(np.zeros((4, 4)), 5)


def test_pool_4x4_to_2x2():
    img = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(red.reduce_pool(img, "max", 2), [5, 7, 13, 15])
    np.testing.assert_array_equal(red.reduce_pool(img, "avg", 2), [2.5, 4.5, 10.5, 12.5])


def test_pool_28_to_4x4_blocks_of_7():
    img = np.random.default_rng(0).uniform(size=(28, 28))
    out = red.reduce_pool(img, "avg", 4)
    assert out[0] == pytest.approx(img[:7, :7].mean())
    assert red.reduce_pool(img, "max", 4)[-1] == img[21:, 21:].max()


def test_pool_non_divisible_needs_padding():
    img = np.ones((28, 28))
    with pytest.raises(ShapeError):
        red.reduce_pool(img, "avg", 16)
    out = red.reduce_pool(img, "avg", 16, pad=True)
    assert out.shape == (256,)
    assert out[0] == 0.0 and out[17] == 1.0  # 2-pixel border of zeros on every side
    assert out.sum() * 4 == pytest.approx(784)


def test_pool_bad_mode():
    with pytest.raises(ConfigError):
        red.reduce_pool(np.ones((4, 4)), "min", 2)


def test_pca_matches_covariance_eigendecomposition():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=(60, 8)) @ rng.normal(size=(8, 8))
        basis = red.pca_fit(x, 3)
        evals, evecs = np.linalg.eigh(np.cov(x, rowvar=False))
        top = evecs[:, np.argsort(evals)[::-1][:3]]
        assert np.abs(projector(basis.components) - projector(top)).max() < 1e-8
        np.testing.assert_allclose(basis.eigenvalues, np.sort(evals)[::-1], rtol=1e-9, atol=1e-12)


def test_pca_components_orthonormal_and_signed():
    x = np.random.default_rng(1).normal(size=(40, 6))
    c = red.pca_fit(x, 4).components
    np.testing.assert_allclose(c.T @ c, np.eye(4), atol=1e-12)
    idx = np.argmax(np.abs(c), axis=0)
    assert np.all(c[idx, np.arange(4)] > 0)


def test_pca_full_rank_reconstruction_is_exact():
    x = np.random.default_rng(2).normal(size=(30, 5))
    basis = red.pca_fit(x, 5)
    np.testing.assert_allclose(red.pca_reconstruct(red.pca_transform(x, basis), basis), x, atol=1e-10)


def test_pca_rank_deficient_pads_with_warning(caplog):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 6))
    with caplog.at_level(logging.WARNING):
        basis = red.pca_fit(x, 4)
    assert basis.padded == 2
    assert not basis.components[:, 2:].any()
    assert "rank" in caplog.text


def test_pca_needs_samples():
    with pytest.raises(ConfigError):
        red.pca_fit(np.ones((3, 5)), 3)


def test_pca_unfitted_transform():
    with pytest.raises(StateError):
        red.pca_transform(np.ones(4), None)
    with pytest.raises(StateError):
        red.apply_frozen(red.ReducerKind(red.PCA, 4), np.ones((1, 1, 2, 2)))


def test_pca_cache_round_trip(tmp_path):
    basis = red.pca_fit(np.random.default_rng(4).normal(size=(20, 6)), 3)
    red.save_pca(basis, tmp_path, "mnist")
    back = red.load_pca(tmp_path, "mnist", 3)
    np.testing.assert_array_equal(back.components, basis.components)
    assert red.load_pca(tmp_path, "mnist", 2) is None


def test_reducer_kind_validation():
    with pytest.raises(ConfigError):
        red.ReducerKind("median", 16)
    with pytest.raises(ConfigError):
        red.ReducerKind(red.CROP, 15)
    assert red.ReducerKind(red.PCA, 15).target_dim == 15
    assert red.ReducerKind(red.FC, 4).trainable


def test_fc_reducer_gradient():
    rng = np.random.default_rng(5)
    params = red.init_fc_reducer(6, 5, 4, rng)
    params = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in params.items()}
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(3, 4))
    out, cache = red.fc_forward(x, params)
    grads = red.fc_backward(params, cache, w)
    h = 1e-6
    for key in params:
        for idx in list(np.ndindex(params[key].shape))[:6]:
            orig = params[key][idx]
            params[key][idx] = orig + h
            up = np.sum(red.fc_forward(x, params)[0] * w)
            params[key][idx] = orig - h
            down = np.sum(red.fc_forward(x, params)[0] * w)
            params[key][idx] = orig
            assert grads[key][idx] == pytest.approx((up - down) / (2 * h), rel=1e-6, abs=1e-9)


def test_fc_reducer_shape_check():
    params = red.init_fc_reducer(6, 5, 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        red.reduce_fc(np.ones(7), params)
    assert red.reduce_fc(np.ones(6), params).shape == (4,)


def test_apply_frozen_colour_images_average_channels():
    imgs = np.random.default_rng(6).uniform(size=(2, 3, 8, 8))
    reducer = red.ReducerKind(red.AVGPOOL, 4)
    np.testing.assert_allclose(red.apply_frozen(reducer, imgs),
                               red.reduce_pool(imgs.mean(axis=1), "avg", 2))


def test_apply_frozen_rejects_fc():
    with pytest.raises(ConfigError):
        red.apply_frozen(red.ReducerKind(red.FC, 4), np.ones((1, 1, 4, 4)))
