"""Modality and module ablation sweeps.

Two tables. The modality table keeps both modules on and toggles which
prior planes are real (the rest are copies of a substitute plane). The
module table keeps every modality and swaps the fusion and alignment
modules for their concatenation stand-ins. The last row of each table is
the same configuration, so it is trained once.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .imageio import ModalityBundle
from .metrics import psnr, ssim
from .model import PRIORS, HmJndNet, ModelConfig
from .train import TrainConfig, train

MODALITY_ROWS = (
    ("none", ()),
    ("sa", ("saliency",)),
    ("de", ("depth",)),
    ("se", ("segmentation",)),
    ("all", PRIORS),
)
# (label, use_hmpf, use_hmfa)
MODULE_ROWS = (
    ("hmpf-off/hmfa-off", False, False),
    ("hmpf-off/hmfa-on", False, True),
    ("hmpf-on/hmfa-off", True, False),
    ("hmpf-on/hmfa-on", True, True),
)


@dataclass(frozen=True)
class AblationRow:
    table: str
    label: str
    psnr_gt: float
    ssim_gt: float


def row_configs(base: ModelConfig) -> list[tuple[str, str, ModelConfig]]:
    rows = [("modality", label, replace(base, modalities=mods, use_hmpf=True, use_hmfa=True))
            for label, mods in MODALITY_ROWS]
    rows += [("module", label, replace(base, modalities=PRIORS, use_hmpf=p, use_hmfa=a))
             for label, p, a in MODULE_ROWS]
    return rows


def score(net: HmJndNet, bundles: Sequence[ModalityBundle]) -> tuple[float, float]:
    """Mean PSNR and SSIM of the redundancy-removed images against ground truth."""
    ps, ss = [], []
    for b in bundles:
        pred = net.predict(b)
        ps.append(psnr(pred.i_rr, b.ground_truth))
        ss.append(ssim(pred.i_rr, b.ground_truth))
    return float(np.mean(ps)), float(np.mean(ss))


def run_ablation(train_set: Sequence[ModalityBundle], eval_set: Sequence[ModalityBundle],
                 train_cfg: TrainConfig, base: ModelConfig,
                 on_row: Callable[[AblationRow], None] | None = None) -> list[AblationRow]:
    """Train and score every row with the same seed; ``on_row`` sees each row as it lands."""
    for b in eval_set:
        if b.ground_truth is None:
            raise ValueError(f"ablation needs ground truth; {b.name or '?'} has none")
    cache: dict[ModelConfig, tuple[float, float]] = {}
    rows = []
    for table, label, cfg in row_configs(base):
        if cfg not in cache:
            net = train(train_set, train_cfg, cfg).net
            cache[cfg] = score(net, eval_set)
        row = AblationRow(table, label, *cache[cfg])
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def full_row(rows: Sequence[AblationRow]) -> AblationRow:
    return next(r for r in rows if r.table == "module" and r.label == MODULE_ROWS[-1][0])


def full_is_best(rows: Sequence[AblationRow]) -> bool:
    """Whether the all-on configuration scores at least as high as every other row."""
    best = full_row(rows).psnr_gt
    return all(best >= r.psnr_gt for r in rows)


ABLATION_HEADER = ("table", "row", "psnr_gt", "ssim_gt")


def rows_csv(rows: Sequence[AblationRow], header: bool = True) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    if header:
        out.writerow(ABLATION_HEADER)
    for r in rows:
        out.writerow([r.table, r.label, repr(r.psnr_gt), repr(r.ssim_gt)])
    return buf.getvalue()
