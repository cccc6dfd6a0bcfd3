"""Noise injection at a fixed MSE and the batch evaluation report.

A JND map is judged by how little a contaminated image suffers when noise
shaped like the map is added at a fixed energy. The noise is
``alpha * gamma * I_vt`` with a random sign ``gamma`` per pixel and
``alpha`` chosen per image so the (unclipped) MSE hits the target exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .imageio import ImagePlane, JndMap
from .metrics import PEAK, mse, ms_ssim, psnr, ssim

METRICS = ("psnr_gt", "ssim_gt", "ms_con")
GT_METRICS = ("psnr_gt", "ssim_gt")


class CalibrationError(ValueError):
    pass


def calibrate_alpha(i_vt: JndMap, target_mse: float = 100.0) -> float:
    """Scale that makes ``mean((alpha * 255 * I_vt)^2)`` equal ``target_mse``.

    Clipping is ignored: the signs square away, so before the final clamp
    the achieved MSE is exact.
    """
    if target_mse <= 0:
        raise ValueError(f"target MSE must be positive, got {target_mse}")
    energy = float(np.mean((PEAK * i_vt.thresholds) ** 2))
    if energy == 0.0:
        raise CalibrationError("unbounded alpha: the JND map is identically zero")
    return math.sqrt(target_mse / energy)


def sign_field(shape: tuple[int, int], seed: int) -> np.ndarray:
    """iid +1/-1 per pixel."""
    return np.random.default_rng(seed).integers(0, 2, size=shape) * 2.0 - 1.0


def _noise(i_ori: ImagePlane, i_vt: JndMap, alpha: float, seed: int) -> np.ndarray:
    if (i_vt.height, i_vt.width) != (i_ori.height, i_ori.width):
        raise ValueError(f"JND map is {i_vt.width}x{i_vt.height}, image is "
                         f"{i_ori.width}x{i_ori.height}")
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    n = alpha * sign_field(i_vt.thresholds.shape, seed) * i_vt.thresholds
    return n[:, :, None]


def inject_noise_unclipped(i_ori: ImagePlane, i_vt: JndMap, alpha: float, seed: int) -> np.ndarray:
    return i_ori.data + _noise(i_ori, i_vt, alpha, seed)


def inject_noise(i_ori: ImagePlane, i_vt: JndMap, alpha: float, seed: int) -> ImagePlane:
    """``clamp(I_ori + alpha * gamma * I_vt, 0, 1)``, same sign on all channels of a pixel."""
    return ImagePlane(np.clip(inject_noise_unclipped(i_ori, i_vt, alpha, seed), 0.0, 1.0))


@dataclass
class EvalItem:
    name: str
    i_ori: ImagePlane
    i_vt: JndMap
    i_rr: ImagePlane | None = None
    i_gt: ImagePlane | None = None


@dataclass
class EvalRow:
    name: str
    alpha: float = math.nan
    mse_pre: float = math.nan
    mse_post: float = math.nan
    psnr_gt: float = math.nan
    ssim_gt: float = math.nan
    ms_con: float = math.nan
    skipped: str = ""


COLUMNS = ("name", "alpha", "mse_pre", "mse_post", "psnr_gt", "ssim_gt", "ms_con", "skipped")


@dataclass
class EvalReport:
    rows: list[EvalRow]
    target_mse: float
    metrics: tuple[str, ...] = METRICS
    diagnostics: list[str] = field(default_factory=list)

    def mean(self, column: str) -> float:
        values = [getattr(r, column) for r in self.rows if not r.skipped]
        return float(np.mean(values)) if values else math.nan

    def means(self) -> dict[str, float]:
        return {c: self.mean(c) for c in COLUMNS[1:-1]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(COLUMNS)
        for r in self.rows:
            out.writerow([r.name] + [repr(getattr(r, c)) for c in COLUMNS[1:-1]] + [r.skipped])
        out.writerow(["mean"] + [repr(v) for v in self.means().values()] + [""])
        return buf.getvalue()

    def table(self) -> str:
        head = f"{'image':<16}{'alpha':>10}{'mse':>10}{'psnr_gt':>10}{'ssim_gt':>10}{'ms_con':>10}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            if r.skipped:
                lines.append(f"{r.name:<16}  skipped: {r.skipped}")
                continue
            lines.append(f"{r.name:<16}{r.alpha:>10.4f}{r.mse_pre:>10.3f}{r.psnr_gt:>10.4f}"
                         f"{r.ssim_gt:>10.4f}{r.ms_con:>10.4f}")
        m = self.means()
        lines.append(f"{'mean':<16}{m['alpha']:>10.4f}{m['mse_pre']:>10.3f}{m['psnr_gt']:>10.4f}"
                     f"{m['ssim_gt']:>10.4f}{m['ms_con']:>10.4f}")
        return "\n".join(lines)


def items_from_model(net, bundles) -> list[EvalItem]:
    """Run the network on each bundle and package the maps for evaluation."""
    out = []
    for b in bundles:
        pred = net.predict(b)
        out.append(EvalItem(b.name, b.rgb, pred.i_vt, pred.i_rr, b.ground_truth))
    return out


def evaluate(items: Sequence[EvalItem], target_mse: float = 100.0, seed: int = 0,
             metrics: Sequence[str] = METRICS) -> EvalReport:
    """Calibrate, inject and score every item; rows come out sorted by name.

    Each image gets its own sign-field seed drawn from one generator seeded
    with ``seed``, in name order. Items whose map is all zero are skipped
    with a diagnostic.
    """
    metrics = tuple(metrics)
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    items = sorted(items, key=lambda it: it.name)
    if any(m in metrics for m in GT_METRICS):
        missing = [it.name for it in items if it.i_gt is None or it.i_rr is None]
        if missing:
            raise ValueError(f"ground-truth metrics requested but {missing[0]} has no "
                             "ground truth or redundancy-removed image")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 63, size=len(items))
    rows, notes = [], []
    for it, s in zip(items, seeds):
        row = EvalRow(it.name)
        if "psnr_gt" in metrics:
            row.psnr_gt = psnr(it.i_rr, it.i_gt)
        if "ssim_gt" in metrics:
            row.ssim_gt = ssim(it.i_rr, it.i_gt)
        try:
            row.alpha = calibrate_alpha(it.i_vt, target_mse)
        except CalibrationError as exc:
            row.skipped = str(exc)
            notes.append(f"{it.name}: {exc}")
            rows.append(row)
            continue
        raw = inject_noise_unclipped(it.i_ori, it.i_vt, row.alpha, int(s))
        con = ImagePlane(np.clip(raw, 0.0, 1.0))
        row.mse_pre = float(np.mean((PEAK * (raw - it.i_ori.data)) ** 2))
        row.mse_post = mse(con, it.i_ori)
        if "ms_con" in metrics:
            row.ms_con = ms_ssim(con, it.i_ori)
        rows.append(row)
    return EvalReport(rows, target_mse, metrics, notes)
