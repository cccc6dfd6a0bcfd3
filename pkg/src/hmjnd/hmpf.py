"""Prior fusion of saliency, depth and segmentation features.

Saliency and depth features are combined twice, by summation (shared
evidence) and by subtraction (disagreement). Each combination passes
through its own SE channel gate and the two are added. The segmentation
feature then modulates the result through a multiplicative map and an
additive map, each produced by its own two-layer convolution branch.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imageio import ImagePlane
from .layers import Conv, ConvStack, SEGate
from .params import ParamStore


class Hmpf:
    def __init__(self, store: ParamStore, channels: int, reduction: int,
                 rng: np.random.Generator, path: str = "hmpf"):
        self.channels = channels
        self.embed_sa = ConvStack(store, f"{path}.embed_sa", 1, channels, rng)
        self.embed_de = ConvStack(store, f"{path}.embed_de", 1, channels, rng)
        self.embed_se = ConvStack(store, f"{path}.embed_se", 1, channels, rng)
        self.gate_sum = SEGate(store, f"{path}.gate_sum", channels, reduction, rng)
        self.gate_sub = SEGate(store, f"{path}.gate_sub", channels, reduction, rng)
        self.sft_gamma = ConvStack(store, f"{path}.sft_gamma", channels, channels, rng, depth=2)
        self.sft_beta = ConvStack(store, f"{path}.sft_beta", channels, channels, rng, depth=2)

    def __call__(self, sa: Tensor, de: Tensor, se: Tensor) -> Tensor:
        f_fuse = fuse_saliency_depth(self.embed_sa(sa), self.embed_de(de), self)
        return modulate_with_segmentation(f_fuse, self.embed_se(se), self)


class ConcatPrior:
    """Ablation stand-in: concatenate the three priors, 3x3 conv stack, then 1x1 conv."""

    def __init__(self, store: ParamStore, channels: int, rng: np.random.Generator,
                 path: str = "prior_concat"):
        self.stack = ConvStack(store, f"{path}.stack", 3, channels, rng)
        self.reduce = Conv(store, f"{path}.reduce", channels, channels, 1, rng)

    def __call__(self, sa: Tensor, de: Tensor, se: Tensor) -> Tensor:
        return self.reduce(ad.relu(self.stack(ad.concat([sa, de, se], axis=1))))


def plane_tensor(plane) -> Tensor:
    """ImagePlane (H, W, C) -> (1, C, H, W) tensor; tensors pass through."""
    if isinstance(plane, Tensor):
        return plane
    data = plane.data if isinstance(plane, ImagePlane) else np.asarray(plane, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    return Tensor(np.ascontiguousarray(data.transpose(2, 0, 1)[None]))


def embed_modality(plane, embedder: ConvStack) -> Tensor:
    return embedder(plane_tensor(plane))


def fuse_saliency_depth(f_sa: Tensor, f_de: Tensor, params: Hmpf) -> Tensor:
    if f_sa.shape != f_de.shape:
        raise ad.ShapeError(f"saliency feature {f_sa.shape} vs depth feature {f_de.shape}")
    f_e = params.gate_sum(f_sa + f_de)
    f_o = params.gate_sub(f_sa - f_de)
    return f_e + f_o


def modulate_with_segmentation(f_fuse: Tensor, f_se: Tensor, params: Hmpf) -> Tensor:
    if f_fuse.shape[2:] != f_se.shape[2:]:
        raise ad.ShapeError(f"fused feature {f_fuse.shape} vs segmentation feature {f_se.shape}")
    return f_fuse * params.sft_gamma(f_se) + params.sft_beta(f_se)


def hmpf_forward(bundle, params: Hmpf) -> Tensor:
    return params(plane_tensor(bundle.saliency), plane_tensor(bundle.depth),
                  plane_tensor(bundle.segmentation))
