"""PSNR, SSIM and MS-SSIM on the 8-bit intensity scale.

Images are stored in [0, 1]; every formula here rescales to 0..255 first so
that an MSE of 100 means what it usually means.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import signal

from .imageio import ImagePlane

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _pixels(x) -> np.ndarray:
    data = x.data if isinstance(x, ImagePlane) else np.asarray(x, dtype=np.float64)
    return data * PEAK


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    """Mean squared error on the 0..255 scale."""
    x, y = _pixels(a), _pixels(b)
    _check_dims(x, y)
    return float(np.mean((x - y) ** 2))


def psnr_from_mse(value: float) -> float:
    return math.inf if value == 0 else 10.0 * math.log10(PEAK * PEAK / value)


def psnr(a, b) -> float:
    """``10 log10(255^2 / MSE)``; identical images give ``inf``."""
    return psnr_from_mse(mse(a, b))


def _luma255(x) -> np.ndarray:
    p = _pixels(x)
    if p.ndim == 3 and p.shape[2] == 3:
        return p @ np.array([0.299, 0.587, 0.114])
    return p.reshape(p.shape[0], p.shape[1])


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-t * t / (2 * sigma * sigma))
    return g / g.sum()


def _filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable, valid positions only
    return signal.convolve2d(signal.convolve2d(x, g[None, :], mode="valid"), g[:, None], mode="valid")


def _ssim_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position SSIM and its contrast-structure factor."""
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape[1]}x{x.shape[0]} is smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    mx, my = _filter(x, g), _filter(y, g)
    sxx = _filter(x * x, g) - mx * mx
    syy = _filter(y * y, g) - my * my
    sxy = _filter(x * y, g) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return lum * cs, cs


def ssim(a, b) -> float:
    """Gaussian-window SSIM of the BT.601 luma, averaged over valid positions."""
    x, y = _luma255(a), _luma255(b)
    _check_dims(x, y)
    return float(_ssim_maps(x, y)[0].mean())


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_scales(height: int, width: int) -> int:
    """How many dyadic scales keep the smaller side at least one SSIM window wide."""
    side, scales = min(height, width), 0
    while scales < len(MS_WEIGHTS) and side >= SSIM_WINDOW:
        scales += 1
        side //= 2
    if scales == 0:
        raise ValueError(f"image {width}x{height} is smaller than the SSIM window")
    return scales


def ms_ssim(a, b) -> float:
    """Multi-scale SSIM with 2x2 mean downsampling, reported in [0, 1].

    Small images use fewer scales; the leading weights are then renormalised
    to sum to one. The full five-scale weights are used as published (they
    sum to 1.0001).
    """
    x, y = _luma255(a), _luma255(b)
    _check_dims(x, y)
    m = ms_scales(*x.shape)
    w = np.array(MS_WEIGHTS[:m])
    if m < len(MS_WEIGHTS):
        w = w / w.sum()
    value = 1.0
    for s in range(m):
        full, cs = _ssim_maps(x, y)
        term = full.mean() if s == m - 1 else cs.mean()
        value *= max(term, 0.0) ** w[s]
        x, y = _downsample(x), _downsample(y)
    return float(min(max(value, 0.0), 1.0))
