import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter
from skimage.metrics import structural_similarity

from hmjnd.imageio import ImagePlane
from hmjnd.metrics import (MS_WEIGHTS, gaussian_window, ms_scales, ms_ssim, mse, psnr, psnr_from_mse,
                           ssim)
from hmjnd.synth import synth_dataset


def reference_ssim(a, b):
    """scikit-image with the same window, constants and population statistics."""
    return structural_similarity(a * 255, b * 255, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False, data_range=255)


def noisy(x, sigma, seed):
    return np.clip(x + sigma * np.random.default_rng(seed).standard_normal(x.shape), 0, 1)


def test_psnr_closed_forms():
    assert psnr_from_mse(100.0) == pytest.approx(28.1308, abs=1e-4)
    assert psnr_from_mse(650.25) == pytest.approx(20.0, abs=1e-12)
    x = np.full((4, 4), 0.5)
    assert psnr(x, x) == math.inf


def test_psnr_and_mse_are_in_bijection(rng):
    a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    m = mse(a, b)
    recovered = 255.0 ** 2 / 10 ** (psnr(a, b) / 10)
    assert recovered == pytest.approx(m, rel=1e-9)
    with pytest.raises(ValueError):
        psnr(a, b[:4])


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((23, 31))
    b = noisy(a, 0.1 * (seed + 1), seed)
    assert ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-12)


def test_ssim_uses_luma_of_colour_images(rng):
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    w = np.array([0.299, 0.587, 0.114])
    assert ssim(a, b) == pytest.approx(reference_ssim(a @ w, b @ w), abs=1e-12)


def test_ssim_identity_symmetry_and_inversion(rng):
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    board = (np.indices((16, 16)).sum(0) % 2).astype(float)
    assert ssim(board, 1 - board) < 0
    assert reference_ssim(board, 1 - board) < 0
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_gaussian_window():
    g = gaussian_window()
    assert g.size == 11 and g.sum() == pytest.approx(1.0)
    assert g[5] == g.max()


def test_ms_ssim_scale_count():
    assert ms_scales(176, 200) == 5
    assert ms_scales(175, 175) == 4
    assert ms_scales(32, 32) == 2
    assert ms_scales(11, 11) == 1
    with pytest.raises(ValueError):
        ms_scales(10, 40)


def test_ms_ssim_five_scale_matches_direct_product(rng):
    a = rng.random((176, 176))
    b = noisy(a, 0.05, 1)
    # assemble from the reference SSIM map: contrast-structure is SSIM over the luminance term
    c1 = (0.01 * 255) ** 2
    x, y, value = a * 255, b * 255, 1.0
    for s, w in enumerate(MS_WEIGHTS):
        full, smap = structural_similarity(x, y, gaussian_weights=True, sigma=1.5,
                                           use_sample_covariance=False, data_range=255, full=True)
        if s == len(MS_WEIGHTS) - 1:
            value *= full ** w
            break
        mx, my = gaussian_filter(x, 1.5, truncate=3.5), gaussian_filter(y, 1.5, truncate=3.5)
        lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
        value *= (smap / lum)[5:-5, 5:-5].mean() ** w
        x = 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])
        y = 0.25 * (y[0::2, 0::2] + y[1::2, 0::2] + y[0::2, 1::2] + y[1::2, 1::2])
    assert ms_ssim(a, b) == pytest.approx(value, abs=1e-9)


def test_ms_ssim_identity_is_one(rng):
    for shape in [(16, 16, 3), (64, 48, 3), (180, 180)]:
        a = rng.random(shape)
        assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-9)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_ms_ssim_is_reported_in_unit_interval(seed, sigma):
    rng = np.random.default_rng(seed)
    a = rng.random((24, 24))
    assert 0.0 <= ms_ssim(a, noisy(a, sigma, seed + 1)) <= 1.0


def test_ms_ssim_decreases_with_noise():
    for b in synth_dataset(3, (64, 64), seed=11):
        scores = [ms_ssim(b.rgb, ImagePlane(noisy(b.rgb.data, s, 0))) for s in (0.01, 0.03, 0.08)]
        assert scores[0] > scores[1] > scores[2]
