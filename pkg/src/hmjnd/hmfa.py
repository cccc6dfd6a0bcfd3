"""Feature alignment of the RGB stream against the fused prior feature.

A chain of STA blocks, each a window encoder followed by a shifted-window
encoder. The queries come from the RGB side. Keys and values are always a
fresh convolution of the original prior feature: block ``i`` reads
convolution ``2i-2`` (identity for ``i == 1``) in its window encoder and
convolution ``2i-1`` in its shifted encoder.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Conv, ConvStack, SEGate, WindowEncoder
from .hmpf import plane_tensor
from .params import ParamStore


class StaBlock:
    def __init__(self, store, path, channels, heads, window, rng, mlp_ratio=2):
        self.wme = WindowEncoder(store, f"{path}.wme", channels, heads, window, 0, rng, mlp_ratio)
        self.swme = WindowEncoder(store, f"{path}.swme", channels, heads, window, window // 2,
                                  rng, mlp_ratio)


class ConcatAlign:
    """Ablation stand-in: concatenate prior and RGB features, SE gate, 1x1 conv."""

    def __init__(self, store, channels, reduction, rng, path="align_concat"):
        self.gate = SEGate(store, f"{path}.gate", 2 * channels, reduction, rng)
        self.reduce = Conv(store, f"{path}.reduce", 2 * channels, channels, 1, rng)

    def __call__(self, f_pr: Tensor, f_r: Tensor, trace=None) -> Tensor:
        return self.reduce(self.gate(ad.concat([f_pr, f_r], axis=1)))


class Hmfa:
    def __init__(self, store: ParamStore, channels: int, heads: int, window: int, blocks: int,
                 rng: np.random.Generator, mlp_ratio: int = 2, reduction: int = 4,
                 attention: bool = True, path: str = "hmfa"):
        if blocks < 1:
            raise ValueError("need at least one STA block")
        if window < 2 or window % 2:
            raise ValueError(f"window must be even and >= 2, got {window}")
        self.channels, self.heads, self.window, self.n = channels, heads, window, blocks
        self.embed_rgb = ConvStack(store, f"{path}.embed_rgb", 3, channels, rng)
        if attention:
            # index 0 is the identity, so only 1 .. 2n-1 carry weights
            self.convs = [None] + [ConvStack(store, f"{path}.kv_conv{j}", channels, channels, rng,
                                             depth=2) for j in range(1, 2 * blocks)]
            self.blocks = [StaBlock(store, f"{path}.sta{i}", channels, heads, window, rng, mlp_ratio)
                           for i in range(1, blocks + 1)]
            self.concat = None
        else:
            self.convs, self.blocks = [], []
            self.concat = ConcatAlign(store, channels, reduction, rng)
        # zero head: the network starts as the identity map I_rr = I_ori
        self.head = Conv(store, f"{path}.head", channels, 3, 1, rng, std=0.0)

    def kv(self, f_pr: Tensor, index: int, trace=None) -> Tensor:
        if trace is not None:
            trace.append(("kv", index))
        return f_pr if index == 0 else self.convs[index](f_pr)


def sta_block(f_q: Tensor, f_pr: Tensor, i: int, params: Hmfa, trace: list | None = None) -> Tensor:
    """Block ``i`` (1-based): window encoder then shifted-window encoder."""
    if f_q.shape != f_pr.shape:
        raise ad.ShapeError(f"query stream {f_q.shape} vs prior stream {f_pr.shape}")
    block = params.blocks[i - 1]
    kv_w = params.kv(f_pr, 2 * i - 2, trace)
    if trace is not None:
        trace.append(("wme", i, block.wme.shift))
    f_m = block.wme(f_q, kv_w)
    kv_sw = params.kv(f_pr, 2 * i - 1, trace)
    if trace is not None:
        trace.append(("swme", i, block.swme.shift))
    return block.swme(f_m, kv_sw)


def hmfa_forward(f_pr: Tensor, f_r: Tensor, params: Hmfa, trace: list | None = None) -> Tensor:
    if f_pr.shape != f_r.shape:
        raise ad.ShapeError(f"prior feature {f_pr.shape} vs RGB feature {f_r.shape}")
    if params.concat is not None:
        return params.concat(f_pr, f_r, trace)
    f = f_r
    for i in range(1, params.n + 1):
        f = sta_block(f, f_pr, i, params, trace)
    return f


def reshape_head(f_an: Tensor, i_ori, params: Hmfa) -> Tensor:
    """1x1 conv to a 3-channel residual, add the input image, clamp to [0, 1].

    ``i_ori`` may be an ImagePlane or an NCHW tensor; the result is NCHW.
    """
    return ad.clamp(params.head(f_an) + plane_tensor(i_ori), 0.0, 1.0)
