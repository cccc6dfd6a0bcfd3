"""Deterministic desk-scale multimodal scenes.

Each scene has a smooth background, a few rectangular objects (some
textured, some flat), a depth ramp with per-object offsets, a saliency
blob over one object and a class-label map. The ground truth removes
local detail with a strength that grows with texture energy and depth,
shrinks with saliency, and varies per segmentation class, so every prior
modality carries information the RGB image alone does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imageio import SEG_CLASSES, ImagePlane, ModalityBundle, segmentation_plane


@dataclass
class Scene:
    bundle: ModalityBundle
    texture_mask: np.ndarray
    strength: np.ndarray


def _texture(rng, h, w, amplitude):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    for _ in range(2):
        period = rng.uniform(2.5, 6.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period + phase)
    out += rng.uniform(-1.0, 1.0, (h, w))
    return amplitude * out / 3.0


def texture_energy(luma: np.ndarray) -> np.ndarray:
    """Local 5x5 standard deviation, mapped to [0, 1]."""
    m = ndimage.uniform_filter(luma, 5, mode="reflect")
    m2 = ndimage.uniform_filter(luma * luma, 5, mode="reflect")
    return np.clip(np.sqrt(np.maximum(m2 - m * m, 0.0)) / 0.06, 0.0, 1.0)


def synth_scene(seed: int, size: tuple[int, int] = (32, 32)) -> Scene:
    w, h = size
    if w < 16 or h < 16:
        raise ValueError(f"synthetic scenes need at least 16x16 pixels, got {w}x{h}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([max(h - 1, 1), max(w - 1, 1)])[:, None, None]

    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9) - 0.5
    rgb = rng.uniform(0.4, 0.6, 3) + 0.25 * ramp[:, :, None] * rng.uniform(0.5, 1.0, 3)

    depth_dir = rng.choice([-1.0, 1.0])
    depth = 0.5 + 0.35 * depth_dir * (yy - 0.5)
    obj_map = np.zeros((h, w), dtype=np.int64)
    classes = np.zeros((h, w), dtype=np.int64)
    textured = np.zeros((h, w), dtype=bool)
    boxes = []
    n_obj = int(rng.integers(2, 5))
    for k in range(1, n_obj + 1):
        ow = int(rng.integers(w // 4, w // 2 + 1))
        oh = int(rng.integers(h // 4, h // 2 + 1))
        x0 = int(rng.integers(0, w - ow + 1))
        y0 = int(rng.integers(0, h - oh + 1))
        sl = (slice(y0, y0 + oh), slice(x0, x0 + ow))
        boxes.append((x0, y0, ow, oh))
        is_textured = k == 1 or (k > 2 and rng.random() < 0.6)
        colour = rng.uniform(0.3, 0.7, 3)
        patch = np.broadcast_to(colour, (oh, ow, 3)).copy()
        if is_textured:
            patch += _texture(rng, oh, ow, rng.uniform(0.25, 0.35))[:, :, None] * rng.uniform(0.7, 1.0, 3)
        rgb[sl] = patch
        obj_map[sl] = k
        classes[sl] = int(rng.integers(1, SEG_CLASSES))
        textured[sl] = is_textured
        depth[sl] = depth[sl] + rng.uniform(-0.25, 0.25)
    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)

    visible = [k for k in range(1, n_obj + 1) if (obj_map == k).any()]
    target = int(rng.choice(visible))
    x0, y0, ow, oh = boxes[target - 1]
    cx, cy = (x0 + ow / 2) / w, (y0 + oh / 2) / h
    sigma = 0.35 * (ow / w + oh / h) / 2 + 0.05
    px, py = np.mgrid[0:h, 0:w][::-1] / np.array([w, h])[:, None, None]
    saliency = np.exp(-((px - cx) ** 2 + (py - cy) ** 2) / (2 * sigma ** 2))

    class_gain = rng.uniform(0.2, 1.0, SEG_CLASSES)
    luma = rgb @ np.array([0.299, 0.587, 0.114])
    strength = (texture_energy(luma) * (0.25 + 0.75 * depth) * (1.0 - 0.7 * saliency)
                * class_gain[classes])
    detail = rgb - ndimage.uniform_filter(rgb, size=(3, 3, 1), mode="reflect")
    gt = np.clip(rgb - strength[:, :, None] * detail, 0.0, 1.0)

    bundle = ModalityBundle(
        rgb=ImagePlane(rgb), saliency=ImagePlane(saliency), depth=ImagePlane(depth),
        segmentation=segmentation_plane(classes), ground_truth=ImagePlane(gt),
        labels=classes, name=f"synth{seed:04d}")
    return Scene(bundle, textured & (obj_map > 0), strength)


def synth_bundle(seed: int, size: tuple[int, int] = (32, 32)) -> ModalityBundle:
    return synth_scene(seed, size).bundle


def synth_dataset(n: int, size: tuple[int, int] = (32, 32), seed: int = 0) -> list[ModalityBundle]:
    return [synth_bundle(seed * 100003 + i, size) for i in range(n)]
