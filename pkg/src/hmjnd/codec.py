"""JND-guided compression with a small self-contained 8x8 block-DCT codec.

Two ways of spending a JND map before coding:

* ``jpeg_pre`` moves each luma sample toward the mean of its 8x8 block by
  at most the local threshold, then codes the image as usual.
* ``residual`` predicts every block by its (rounded) mean, shrinks the
  prediction residual where the threshold says it is invisible, and codes
  the residual.

Chroma never sees the JND map. The rate is the order-0 entropy of the
run-length symbol stream, so "bits" are an estimate rather than a
bitstream.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import fft, ndimage

from .imageio import ImagePlane, JndMap
from .metrics import ms_ssim, psnr

BLOCK = 8
VAR_EPS = 1e-6
MODES = ("plain", "jpeg_pre", "residual")
EOB = (0, 0)
PRED = -1  # run value tagging a block-prediction symbol

# Annex K luminance table
JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_TO_YCC = np.array([[0.299, 0.587, 0.114],
                    [-0.168736, -0.331264, 0.5],
                    [0.5, -0.418688, -0.081312]])
_FROM_YCC = np.linalg.inv(_TO_YCC)


# --- the two JND rules -------------------------------------------------------

def preprocess_pixel(value: np.ndarray, block_mean: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise rule on 8-bit values; returns ``(output, branch)``.

    Branch 0 snaps to the block mean, 1 lifts a sample far below the mean
    by ``vt``, 2 lowers a sample above it by ``vt``.
    """
    d = value - block_mean
    snap = np.abs(d) <= vt
    below = ~snap & (d < -vt)
    out = np.where(snap, block_mean, np.where(below, value + vt, value - vt))
    branch = np.where(snap, 0, np.where(below, 1, 2))
    return np.clip(out, 0.0, 255.0), branch


def filter_residual(r, i_vt, var_local, var_block):
    """Shrink a prediction residual (scalar or array, 8-bit units).

    Zero when ``|r| <= i_vt`` in a region busier than its block; otherwise
    the residual goes to whichever of ``r * |i_vt| / var_block`` and
    ``r -+ i_vt`` lies further from zero on its own side, so the sign is
    kept. Note the first term grows the residual when ``i_vt > var_block``.
    Block variances below ``1e-6`` (numerically zero) are replaced by it.
    """
    out, _ = filter_residual_branches(r, i_vt, var_local, var_block)
    return out if np.ndim(out) else float(out)


def filter_residual_branches(r, i_vt, var_local, var_block):
    r, vt = np.asarray(r, dtype=np.float64), np.asarray(i_vt, dtype=np.float64)
    var_local = np.asarray(var_local, dtype=np.float64)
    var_block = np.asarray(var_block, dtype=np.float64)
    var_block = np.where(var_block < VAR_EPS, VAR_EPS, var_block)
    scaled = r * np.abs(vt) / var_block
    zero = (np.abs(r) <= vt) & (var_local > var_block)
    neg = ~zero & (r < 0)
    out = np.where(zero, 0.0, np.where(neg, np.minimum(scaled, r + vt), np.maximum(scaled, r - vt)))
    branch = np.where(zero, 0, np.where(neg, 1, 2))
    return out, branch


# --- block context -----------------------------------------------------------

def _block_slices(height: int, width: int):
    for y in range(0, height, BLOCK):
        for x in range(0, width, BLOCK):
            yield slice(y, y + BLOCK), slice(x, x + BLOCK)


@dataclass
class BlockContext:
    """Per-pixel block mean, 3x3 local variance and block variance (8-bit units)."""

    block_mean: np.ndarray
    var_local: np.ndarray
    var_block: np.ndarray

    @classmethod
    def of(cls, y: np.ndarray) -> "BlockContext":
        mean = np.empty_like(y)
        var_b = np.empty_like(y)
        for sl in _block_slices(*y.shape):
            mean[sl] = y[sl].mean()
            var_b[sl] = y[sl].var()
        m = ndimage.uniform_filter(y, 3, mode="reflect")
        var_l = np.maximum(ndimage.uniform_filter(y * y, 3, mode="reflect") - m * m, 0.0)
        return cls(mean, var_l, var_b)


# --- transform, quantisation, symbols ----------------------------------------

def block_dct8(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-2:] != (BLOCK, BLOCK):
        raise ValueError(f"expected 8x8 blocks, got {block.shape}")
    return fft.dctn(block, type=2, norm="ortho", axes=(-2, -1))


def block_idct8(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-2:] != (BLOCK, BLOCK):
        raise ValueError(f"expected 8x8 blocks, got {coeffs.shape}")
    return fft.idctn(coeffs, type=2, norm="ortho", axes=(-2, -1))


def quant_table(quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in 1..100, got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((JPEG_LUMA * scale + 50) / 100), 1, 255)


def quantize(coeffs: np.ndarray, quality: int) -> np.ndarray:
    return np.rint(coeffs / quant_table(quality)).astype(np.int64)


def dequantize(symbols: np.ndarray, quality: int) -> np.ndarray:
    return symbols * quant_table(quality)


def _zigzag_order() -> np.ndarray:
    idx = [(i, j) for i in range(BLOCK) for j in range(BLOCK)]
    idx.sort(key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]))
    return np.array([i * BLOCK + j for i, j in idx])


ZIGZAG = _zigzag_order()


def zigzag(block: np.ndarray) -> np.ndarray:
    return np.asarray(block).reshape(-1)[ZIGZAG]


def unzigzag(seq: np.ndarray) -> np.ndarray:
    out = np.empty(BLOCK * BLOCK, dtype=np.asarray(seq).dtype)
    out[ZIGZAG] = seq
    return out.reshape(BLOCK, BLOCK)


def run_length(seq) -> list[tuple[int, int]]:
    """``(zeros skipped, level)`` for every nonzero entry, then ``EOB``."""
    out, run = [], 0
    for v in seq:
        if v:
            out.append((run, int(v)))
            run = 0
        else:
            run += 1
    out.append(EOB)
    return out


def bpp_estimate(symbols, n_pixels: int) -> float:
    """Order-0 entropy of the symbol stream times its length, per pixel."""
    if n_pixels <= 0:
        raise ValueError("pixel count must be positive")
    counts = np.array(list(Counter(symbols).values()), dtype=np.float64)
    if counts.size <= 1:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum() * counts.sum() / n_pixels)


def _pad_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    p = np.pad(plane, ((0, (-h) % BLOCK), (0, (-w) % BLOCK)), mode="edge")
    hb, wb = p.shape[0] // BLOCK, p.shape[1] // BLOCK
    return p.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3)


def _unpad_blocks(blocks: np.ndarray, height: int, width: int) -> np.ndarray:
    hb, wb = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(hb * BLOCK, wb * BLOCK)[:height, :width]


def code_plane(plane: np.ndarray, quality: int, offset: float = 128.0) -> tuple[np.ndarray, list]:
    """DCT-code one plane (8-bit units); returns the reconstruction and its symbols."""
    blocks = _pad_blocks(plane - offset)
    q = quantize(block_dct8(blocks), quality)
    symbols = []
    for row in q:
        for b in row:
            symbols.extend(run_length(zigzag(b)))
    rec = block_idct8(dequantize(q, quality)) + offset
    return _unpad_blocks(rec, *plane.shape), symbols


# --- pipelines ---------------------------------------------------------------

def _to_ycc(image: ImagePlane) -> np.ndarray:
    """Integer 8-bit YCbCr samples, as a real codec would see them."""
    px = image.data * 255.0
    if image.channels == 1:
        return np.rint(px)
    ycc = px @ _TO_YCC.T
    ycc[:, :, 1:] += 128.0
    return np.clip(np.rint(ycc), 0.0, 255.0)


def _from_ycc(ycc: np.ndarray) -> ImagePlane:
    if ycc.shape[2] == 1:
        return ImagePlane(np.clip(ycc / 255.0, 0.0, 1.0))
    shifted = ycc.copy()
    shifted[:, :, 1:] -= 128.0
    return ImagePlane(np.clip((shifted @ _FROM_YCC.T) / 255.0, 0.0, 1.0))


def _check(image: ImagePlane, i_vt: JndMap) -> None:
    if (i_vt.height, i_vt.width) != (image.height, image.width):
        raise ValueError(f"JND map is {i_vt.width}x{i_vt.height}, image is "
                         f"{image.width}x{image.height}")


def preprocess_luma(y: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return preprocess_pixel(y, BlockContext.of(y).block_mean, vt)


def preprocess_jpeg(i_ori: ImagePlane, i_vt: JndMap) -> ImagePlane:
    """Apply the block-mean rule to the luma of ``i_ori``; chroma is untouched."""
    _check(i_ori, i_vt)
    ycc = _to_ycc(i_ori)
    ycc[:, :, 0], _ = preprocess_luma(ycc[:, :, 0], 255.0 * i_vt.thresholds)
    return _from_ycc(ycc)


@dataclass
class CodecStats:
    mode: str
    quality: int
    bpp: float
    psnr: float
    ms_ssim: float
    n_pixels: int
    branch_counts: dict[str, int] = field(default_factory=dict)
    guarded_blocks: int = 0
    reconstruction: ImagePlane | None = None

    def branch_string(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.branch_counts.items())

    def csv_row(self) -> str:
        return f"{self.bpp!r},{self.psnr!r},{self.ms_ssim!r},{self.branch_string()}"


STATS_HEADER = "bpp,psnr,ms_ssim,branch_counts"
PRE_BRANCHES = ("mean", "up", "down")
RESIDUAL_BRANCHES = ("zeroed", "negative", "positive")


def _residual_luma(y: np.ndarray, vt: np.ndarray, quality: int):
    ctx = BlockContext.of(y)
    pred = np.rint(ctx.block_mean)
    filtered, branch = filter_residual_branches(y - pred, vt, ctx.var_local, ctx.var_block)
    guarded = sum(1 for sl in _block_slices(*y.shape) if ctx.var_block[sl][0, 0] < VAR_EPS)
    rec, symbols = code_plane(filtered, quality, offset=0.0)
    symbols = [(PRED, int(pred[sl][0, 0])) for sl in _block_slices(*y.shape)] + symbols
    return rec + pred, symbols, branch, guarded


def compress(image: ImagePlane, i_vt: JndMap | None, mode: str = "jpeg_pre",
             quality: int = 50) -> CodecStats:
    """Code ``image`` in one of :data:`MODES` and measure rate and distortion.

    Distortion is measured against the unprocessed input.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    quant_table(quality)
    if i_vt is None:
        if mode != "plain":
            raise ValueError(f"mode {mode} needs a JND map")
    else:
        _check(image, i_vt)
    ycc = _to_ycc(image)
    out = np.empty_like(ycc)
    symbols: list = []
    counts: dict[str, int] = {}
    guarded = 0
    y = ycc[:, :, 0]
    if mode == "residual":
        out[:, :, 0], sym, branch, guarded = _residual_luma(y, 255.0 * i_vt.thresholds, quality)
        names = RESIDUAL_BRANCHES
    else:
        branch = None
        if mode == "jpeg_pre":
            y, branch = preprocess_luma(y, 255.0 * i_vt.thresholds)
            names = PRE_BRANCHES
        out[:, :, 0], sym = code_plane(y, quality)
    symbols += sym
    if branch is not None:
        counts = {n: int((branch == k).sum()) for k, n in enumerate(names)}
    for c in range(1, ycc.shape[2]):
        out[:, :, c], sym = code_plane(ycc[:, :, c], quality)
        symbols += sym
    rec = _from_ycc(out)
    n = image.height * image.width
    return CodecStats(mode, quality, bpp_estimate(symbols, n), psnr(rec, image),
                      ms_ssim(rec, image), n, counts, guarded, rec)
