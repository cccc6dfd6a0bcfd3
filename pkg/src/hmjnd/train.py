"""Composite loss, patch tiling, Adam and the training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .imageio import ModalityBundle
from .model import HmJndNet, ModelConfig, stack_bundles
from .params import ParamStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lambda_fea: float = 1e-4
    lambda_pix: float = 1.0
    batch_size: int = 4
    epochs: int = 50
    lr: float = 1e-4
    patch: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_fea < 0 or self.lambda_pix < 0 or self.lambda_fea + self.lambda_pix <= 0:
            raise ValueError("loss weights must be nonnegative with a positive sum")
        if self.batch_size < 1 or self.epochs < 0 or self.patch < 1:
            raise ValueError("batch_size and patch must be positive, epochs nonnegative")

    def to_strings(self) -> dict[str, str]:
        return {f"train.{k}": repr(v) for k, v in asdict(self).items()}

    @classmethod
    def from_strings(cls, items: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            key = f"train.{f.name}"
            if key in items:
                kwargs[f.name] = (int if f.type in ("int", int) else float)(items[key])
        return cls(**kwargs)


class LossTerms(NamedTuple):
    total: Tensor
    fea: Tensor
    pix: Tensor


def loss_terms(f_r: Tensor, f_pr: Tensor, i_rr: Tensor, i_gt, cfg: TrainConfig) -> LossTerms:
    i_gt = ad.as_tensor(i_gt)
    if f_r.shape != f_pr.shape:
        raise ad.ShapeError(f"feature shapes differ: {f_r.shape} vs {f_pr.shape}")
    if i_rr.shape != i_gt.shape:
        raise ad.ShapeError(f"image shapes differ: {i_rr.shape} vs {i_gt.shape}")
    fea = ad.mean(ad.tabs(f_r - f_pr))
    pix = ad.mean(ad.square(i_rr - i_gt))
    return LossTerms(fea * cfg.lambda_fea + pix * cfg.lambda_pix, fea, pix)


def loss_overall(f_r: Tensor, f_pr: Tensor, i_rr: Tensor, i_gt, cfg: TrainConfig) -> Tensor:
    """``lambda_fea * mean|F_r - F_pr| + lambda_pix * mean (I_rr - I_gt)^2``."""
    return loss_terms(f_r, f_pr, i_rr, i_gt, cfg).total


def patch_origins(length: int, patch: int) -> list[int]:
    """Tile starts along one axis; a remainder tile is anchored to the far edge."""
    if patch > length:
        raise ValueError(f"patch {patch} larger than image extent {length}")
    starts = list(range(0, length - patch + 1, patch))
    if starts[-1] + patch < length:
        starts.append(length - patch)
    return starts


def patch_partition(bundle: ModalityBundle, patch: int) -> list[ModalityBundle]:
    return [bundle.crop(x, y, patch, patch)
            for y in patch_origins(bundle.height, patch)
            for x in patch_origins(bundle.width, patch)]


def adam_step(params: ParamStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    missing = [k for k, t in params.items() if t.grad is None]
    if missing:
        raise ContractError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    b1, b2 = betas
    params.step += 1
    c1 = 1.0 - b1 ** params.step
    c2 = 1.0 - b2 ** params.step
    for path, t in params.items():
        m, v = params.moments.get(path) or (np.zeros_like(t.data), np.zeros_like(t.data))
        m = b1 * m + (1.0 - b1) * t.grad
        v = b2 * v + (1.0 - b2) * t.grad * t.grad
        params.moments[path] = (m, v)
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear decay from ``cfg.lr`` at epoch 0 to 0 at ``cfg.epochs``."""
    if cfg.epochs == 0:
        return cfg.lr
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return cfg.lr * (1.0 - epoch / cfg.epochs)


@dataclass
class TrainResult:
    net: HmJndNet
    log: list[tuple[int, int, float, float, float]]
    epoch_losses: list[float]

    @property
    def params(self) -> ParamStore:
        return self.net.store

    def log_csv(self) -> str:
        rows = ["epoch,step,loss_total,loss_fea,loss_pix"]
        rows += [f"{e},{s},{t!r},{f!r},{p!r}" for e, s, t, f, p in self.log]
        return "\n".join(rows) + "\n"


def train(dataset: Sequence[ModalityBundle], cfg: TrainConfig = TrainConfig(),
          model_cfg: ModelConfig = ModelConfig(), net: HmJndNet | None = None) -> TrainResult:
    """Shuffled mini-batch Adam over edge-anchored patches of every bundle."""
    if not dataset:
        raise ValueError("training needs at least one bundle")
    for b in dataset:
        if b.ground_truth is None:
            raise ValueError(f"bundle {b.name or '?'} has no ground truth")
    if cfg.patch % model_cfg.window:
        raise ValueError(f"patch {cfg.patch} must be a multiple of window {model_cfg.window}")
    net = net or HmJndNet(model_cfg, seed=cfg.seed)
    patches = [p for b in dataset for p in patch_partition(b, cfg.patch)]
    data = stack_bundles(patches, model_cfg)
    rng = np.random.default_rng(cfg.seed)
    history, epoch_losses = [], []
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(len(patches))
        totals = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = {k: v[idx] for k, v in data.items()}
            out = net.forward(batch)
            terms = loss_terms(out.f_r, out.f_pr, out.i_rr, batch["gt"], cfg)
            ad.backward(terms.total, net.store)
            adam_step(net.store, lr, (cfg.beta1, cfg.beta2), cfg.eps)
            history.append((epoch, step, terms.total.item(), terms.fea.item(), terms.pix.item()))
            totals.append(terms.total.item())
            step += 1
        epoch_losses.append(float(np.mean(totals)))
        log.debug("epoch %d lr %.3g loss %.6g", epoch, lr, epoch_losses[-1])
    return TrainResult(net, history, epoch_losses)


def dataset_loss(net: HmJndNet, dataset: Sequence[ModalityBundle], cfg: TrainConfig) -> float:
    """Loss of ``net`` over whole bundles (no patching, no update)."""
    values = []
    for b in dataset:
        batch = stack_bundles([b], net.cfg)
        out = net.forward(batch)
        values.append(loss_overall(out.f_r, out.f_pr, out.i_rr, batch["gt"], cfg).item())
    return float(np.mean(values))
