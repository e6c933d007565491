from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myodec.config import SonoConfig
from myodec.errors import BadFactor, DimMismatch, InsufficientImages, ValidationError
from myodec.simulator import freeform_trajectory
from myodec.sono import (
    DegenerateVariance,
    PixelMask,
    apply_mask,
    blob_images,
    build_mask,
    downsample,
    fit_pipeline,
    gaussian_kernel,
    gaussian_smooth,
    variance_map,
)


def test_downsample_examples(rng):
    np.testing.assert_array_equal(downsample(np.full((8, 8), 0.5), 4), np.full((2, 2), 0.5))
    img = rng.standard_normal((5, 7))
    np.testing.assert_array_equal(downsample(img, 1), img)
    board = (np.add.outer(np.arange(6), np.arange(6)) % 2).astype(float)
    np.testing.assert_array_equal(downsample(board, 2), np.full((3, 3), 0.5))
    for bad in (0, -2, 1.5):
        with pytest.raises(BadFactor):
            downsample(img, bad)


def test_downsample_edge_pad():
    img = np.arange(9.0).reshape(3, 3)
    out = downsample(img, 2)
    assert out.shape == (2, 2)
    assert out[1, 1] == 8.0
    assert out[0, 1] == np.mean([2, 2, 5, 5])


def test_smooth_constant_and_impulse():
    const = np.full((20, 17), 0.7)
    assert np.abs(gaussian_smooth(const, 1.3) - 0.7).max() < 1e-12
    img = np.zeros((31, 31))
    img[15, 15] = 1.0
    out = gaussian_smooth(img, 2.0)
    assert abs(out.sum() - 1.0) < 1e-9
    k = gaussian_kernel(2.0)
    r = k.size // 2
    np.testing.assert_allclose(out[15 - r:16 + r, 15 - r:16 + r], np.outer(k, k), atol=1e-15)


def test_smooth_narrow_sigma_is_identity(rng):
    img = rng.standard_normal((9, 9))
    assert np.count_nonzero(gaussian_kernel(1e-3)) == 1
    np.testing.assert_array_equal(gaussian_smooth(img, 1e-3), img)
    with pytest.raises(ValidationError):
        gaussian_smooth(img, 0.0)


def test_gaussian_kernel_oracle():
    for sigma in (0.5, 1.0, 2.7):
        k = gaussian_kernel(sigma)
        r = int(np.ceil(3 * sigma))
        ref = np.array([np.exp(-x * x / (2 * sigma * sigma)) for x in range(-r, r + 1)])
        np.testing.assert_allclose(k, ref / ref.sum(), rtol=1e-14)


def test_mask_examples():
    imgs = np.full((6, 4, 4), 0.3)
    with pytest.warns(DegenerateVariance):
        m = build_mask(variance_map(imgs), 0.25)
    assert m.keep.ravel().tolist() == [True] * 4 + [False] * 12
    imgs = np.full((6, 4, 4), 0.3)
    imgs[::2, 2, 1] = 0.9
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = build_mask(variance_map(imgs), 0.05)
    assert m.kept == 1 and m.keep[2, 1]
    with pytest.raises(InsufficientImages):
        variance_map(imgs[:1])


def test_apply_mask_examples(rng):
    img = rng.standard_normal((4, 5))
    np.testing.assert_array_equal(apply_mask(img, PixelMask(np.ones((4, 5), bool))), img.ravel())
    one = np.zeros((4, 5), bool)
    one[3, 2] = True
    assert apply_mask(img, PixelMask(one)).tolist() == [img[3, 2]]
    with pytest.raises(DimMismatch):
        apply_mask(img.T, PixelMask(one))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_masked_length_equals_kept(seed, frac):
    rng = np.random.default_rng(seed)
    m = build_mask(rng.uniform(size=(7, 9)), frac)
    assert apply_mask(rng.standard_normal((3, 7, 9)), m).shape == (3, m.kept)
    assert m.kept == max(1, round(frac * 63))


def test_pipeline_reduction_and_determinism():
    phi = freeform_trajectory(30.0, seed=0)
    imgs = blob_images(phi, seed=0)
    pipe = fit_pipeline(imgs[:600])
    assert pipe.mask.kept == 84
    assert abs(pipe.reduction / 12 - 1) <= 0.2
    f = pipe.features(imgs[600:])
    assert f.shape == (imgs.shape[0] - 600, 84)
    assert np.array_equal(f, fit_pipeline(imgs[:600]).features(imgs[600:]))
    with pytest.raises(DimMismatch):
        pipe.features(imgs[:, :16])
    odd = fit_pipeline(np.random.default_rng(0).uniform(size=(4, 33, 30)), SonoConfig())
    assert odd.mask.shape == (17, 15)


def test_blob_images_track_fingers():
    phi = np.full((2, 7), 0.1)
    phi[1, 4] = 0.9
    imgs = blob_images(phi, noise=0.0)
    assert imgs.shape == (2, 32, 32) and imgs.min() >= 0 and imgs.max() <= 1
    diff = np.abs(imgs[1] - imgs[0]).sum(axis=0)
    col = np.argmax(diff)
    assert 2 * 32 / 5 <= col < 3 * 32 / 5
