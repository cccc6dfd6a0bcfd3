"""Parameterised building blocks: convolutions, SE gates, window attention.

Feature maps are NCHW. Window attention works on NHWC internally because
the token axis must be contiguous with the channel axis.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore, trunc_normal



def _std(fan_in: int, std: float | None) -> float:
    # truncated normal scaled by fan-in; a flat 0.02 starves the deeper stacks
    return math.sqrt(2.0 / fan_in) if std is None else std


class Conv:
    def __init__(self, store: ParamStore, path: str, c_in: int, c_out: int, k: int,
                 rng: np.random.Generator, std: float | None = None):
        self.weight = store.add(f"{path}.weight",
                                trunc_normal(rng, (c_out, c_in, k, k), _std(c_in * k * k, std)))
        self.bias = store.add(f"{path}.bias", np.zeros(c_out))
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=1, pad=self.pad)


class ConvStack:
    """``depth`` same-size convolutions with ReLU between (none after the last)."""

    def __init__(self, store, path, c_in, c_out, rng, depth=3, k=3, hidden=None):
        hidden = hidden or c_out
        widths = [c_in] + [hidden] * (depth - 1) + [c_out]
        self.convs = [Conv(store, f"{path}.conv{i}", widths[i], widths[i + 1], k, rng)
                      for i in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.convs):
            if i:
                x = ad.relu(x)
            x = conv(x)
        return x


class Linear:
    def __init__(self, store, path, c_in, c_out, rng, std=None):
        self.weight = store.add(f"{path}.weight", trunc_normal(rng, (c_out, c_in), _std(c_in, std)))
        self.bias = store.add(f"{path}.bias", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.fully_connected(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store, path, channels):
        self.gamma = store.add(f"{path}.gamma", np.ones(channels))
        self.beta = store.add(f"{path}.beta", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class SEGate:
    """Channel attention ``f * g + f`` with ``g = sigmoid(fc(relu(fc(pool(f)))))``."""

    def __init__(self, store, path, channels, reduction, rng):
        if channels % reduction:
            raise ValueError(f"SE reduction {reduction} must divide channels {channels}")
        self.squeeze = Linear(store, f"{path}.fc_r", channels, channels // reduction, rng)
        self.excite = Linear(store, f"{path}.fc_s", channels // reduction, channels, rng)

    def gate(self, f: Tensor) -> Tensor:
        pooled = ad.global_avg_pool(f)
        return ad.sigmoid(self.excite(ad.relu(self.squeeze(pooled))))

    def __call__(self, f: Tensor) -> Tensor:
        g = self.gate(f)
        g4 = ad.reshape(g, (g.shape[0], g.shape[1], 1, 1))
        return f * g4 + f


def se_gate(f: Tensor, gate: SEGate) -> Tensor:
    return gate(f)


# --- windows ---------------------------------------------------------------

def _partition_nhwc(x: Tensor, window: int, shift: int) -> Tensor:
    n, h, w, c = x.shape
    if shift:
        x = ad.roll(x, (-shift, -shift), axis=(1, 2))
    x = ad.reshape(x, (n, h // window, window, w // window, window, c))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (n * (h // window) * (w // window), window * window, c))


def _merge_nhwc(tokens: Tensor, window: int, shift: int, h: int, w: int) -> Tensor:
    c = tokens.shape[-1]
    n = tokens.shape[0] // ((h // window) * (w // window))
    x = ad.reshape(tokens, (n, h // window, w // window, window, window, c))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    x = ad.reshape(x, (n, h, w, c))
    if shift:
        x = ad.roll(x, (shift, shift), axis=(1, 2))
    return x


def _check_window(window: int, shift: int) -> None:
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if not 0 <= shift < window:
        raise ValueError(f"shift must lie in [0, window), got {shift}")


def window_partition(x: Tensor, window: int, shift: int = 0) -> Tensor:
    """Split an NCHW map into ``(N * windows, window**2, C)`` token groups.

    A nonzero ``shift`` cyclically rolls the plane by ``(-shift, -shift)``
    first. H and W must be multiples of ``window``.
    """
    _check_window(window, shift)
    if x.shape[2] % window or x.shape[3] % window:
        raise ValueError(f"spatial size {x.shape[2:]} is not a multiple of window {window}")
    return _partition_nhwc(ad.transpose(x, (0, 2, 3, 1)), window, shift)


def window_merge(tokens: Tensor, window: int, shift: int, height: int, width: int) -> Tensor:
    """Inverse of :func:`window_partition`; returns NCHW."""
    _check_window(window, shift)
    return ad.transpose(_merge_nhwc(tokens, window, shift, height, width), (0, 3, 1, 2))


@lru_cache(maxsize=64)
def shift_mask(height: int, width: int, window: int, shift: int) -> np.ndarray:
    """Additive ``(windows, L, L)`` mask: ``-inf`` between tokens that were not
    neighbours before the cyclic roll, 0 elsewhere."""
    labels = np.zeros((height, width))
    cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    region = 0
    for hs in cuts:
        for ws in cuts:
            labels[hs, ws] = region
            region += 1
    t = labels.reshape(height // window, window, width // window, window)
    t = t.transpose(0, 2, 1, 3).reshape(-1, window * window)
    mask = np.where(t[:, :, None] != t[:, None, :], -np.inf, 0.0)
    mask.flags.writeable = False
    return mask


class WindowAttention:
    """Multi-head cross-attention projections (query, key, value, output)."""

    def __init__(self, store, path, channels, heads, rng):
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.channels = channels
        self.q = Linear(store, f"{path}.q", channels, channels, rng)
        self.k = Linear(store, f"{path}.k", channels, channels, rng)
        self.v = Linear(store, f"{path}.v", channels, channels, rng)
        self.proj = Linear(store, f"{path}.proj", channels, channels, rng)

    def nhwc(self, q: Tensor, kv_k: Tensor, kv_v: Tensor, window: int, shift: int) -> Tensor:
        n, h, w, c = q.shape
        if kv_k.shape != q.shape or kv_v.shape != q.shape:
            raise ad.ShapeError(f"attention streams differ: {q.shape}, {kv_k.shape}, {kv_v.shape}")
        if c % self.heads:
            raise ValueError(f"channels {c} not divisible by heads {self.heads}")
        _check_window(window, shift)
        ph, pw = (-h) % window, (-w) % window
        if ph or pw:
            q, kv_k, kv_v = (ad.pad_spatial(t, ph, pw, axes=(1, 2)) for t in (q, kv_k, kv_v))
        hp, wp = h + ph, w + pw
        if shift and (hp <= window and wp <= window):
            shift = 0
        tq = self.q(_partition_nhwc(q, window, shift))
        tk = self.k(_partition_nhwc(kv_k, window, shift))
        tv = self.v(_partition_nhwc(kv_v, window, shift))
        b, L, _ = tq.shape
        d = c // self.heads

        def heads(t):
            return ad.transpose(ad.reshape(t, (b, L, self.heads, d)), (0, 2, 1, 3))

        scores = ad.matmul(heads(tq), ad.transpose(heads(tk), (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
        if shift:
            mask = shift_mask(hp, wp, window, shift)
            mask = np.tile(mask, (n, 1, 1))[:, None]
            scores = scores + mask
        attn = ad.softmax(scores)
        out = ad.matmul(attn, heads(tv))
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, L, c))
        out = _merge_nhwc(self.proj(out), window, shift, hp, wp)
        return ad.crop_spatial(out, h, w, axes=(1, 2))


def windowed_cross_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, window: int,
                             shift: int, params: WindowAttention) -> Tensor:
    """Per-window scaled dot-product attention of ``q`` against ``k``/``v`` (NCHW in/out)."""
    if params.heads != heads:
        raise ValueError(f"params built for {params.heads} heads, called with {heads}")
    to_nhwc = (0, 2, 3, 1)
    out = params.nhwc(ad.transpose(q, to_nhwc), ad.transpose(k, to_nhwc),
                      ad.transpose(v, to_nhwc), window, shift)
    return ad.transpose(out, (0, 3, 1, 2))


class WindowEncoder:
    """norm -> window cross-attention -> residual -> norm -> MLP -> residual.

    ``shift == 0`` gives the plain window encoder, ``window // 2`` the
    shifted one.
    """

    def __init__(self, store, path, channels, heads, window, shift, rng, mlp_ratio=2):
        self.window = window
        self.shift = shift
        self.norm_q = LayerNorm(store, f"{path}.norm_q", channels)
        self.norm_kv = LayerNorm(store, f"{path}.norm_kv", channels)
        self.attn = WindowAttention(store, f"{path}.attn", channels, heads, rng)
        self.norm_mlp = LayerNorm(store, f"{path}.norm_mlp", channels)
        self.fc1 = Linear(store, f"{path}.mlp.fc1", channels, channels * mlp_ratio, rng)
        self.fc2 = Linear(store, f"{path}.mlp.fc2", channels * mlp_ratio, channels, rng)

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        q = ad.transpose(query, (0, 2, 3, 1))
        kv = self.norm_kv(ad.transpose(context, (0, 2, 3, 1)))
        x = q + self.attn.nhwc(self.norm_q(q), kv, kv, self.window, self.shift)
        x = x + self.fc2(ad.relu(self.fc1(self.norm_mlp(x))))
        return ad.transpose(x, (0, 3, 1, 2))
