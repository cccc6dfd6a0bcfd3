"""The full forecasting network: prior fusion, RGB alignment, residual head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor
from .hmfa import Hmfa, hmfa_forward, reshape_head
from .hmpf import ConcatPrior, Hmpf
from .imageio import ImagePlane, JndMap, ModalityBundle
from .params import ParamStore, load_state, save_params

PRIORS = ("saliency", "depth", "segmentation")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 16
    se_reduction: int = 4
    window: int = 8
    heads: int = 2
    blocks: int = 3
    mlp_ratio: int = 2
    use_hmpf: bool = True
    use_hmfa: bool = True
    modalities: tuple[str, ...] = PRIORS
    substitute: str = "saliency"

    def __post_init__(self):
        unknown = set(self.modalities) - set(PRIORS)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")

    def to_strings(self) -> dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            out[f"model.{k}"] = ",".join(v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_strings(cls, items: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            key = f"model.{f.name}"
            if key not in items:
                continue
            raw = items[key]
            if f.name == "modalities":
                kwargs[f.name] = tuple(m for m in raw.split(",") if m)
            elif f.name == "substitute":
                kwargs[f.name] = raw
            elif f.name.startswith("use_"):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def prior_planes(bundle: ModalityBundle, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """The three prior planes after ablation substitution, each ``(H, W)``.

    A disabled modality is replaced by a copy of an enabled one (the
    configured substitute if enabled, else the first enabled). With none
    enabled every prior becomes the RGB luma.
    """
    enabled = [m for m in PRIORS if m in cfg.modalities]
    if enabled:
        fill_key = cfg.substitute if cfg.substitute in enabled else enabled[0]
        fill = getattr(bundle, fill_key).data[:, :, 0]
    else:
        fill = bundle.rgb.luma()
    return {m: (getattr(bundle, m).data[:, :, 0] if m in enabled else fill) for m in PRIORS}


def stack_bundles(bundles: Sequence[ModalityBundle], cfg: ModelConfig) -> dict[str, np.ndarray]:
    """NCHW arrays for a batch of equally sized bundles."""
    rgb = np.stack([b.rgb.data.transpose(2, 0, 1) for b in bundles])
    priors = [prior_planes(b, cfg) for b in bundles]
    batch = {"rgb": rgb}
    for m in PRIORS:
        batch[m] = np.stack([p[m] for p in priors])[:, None]
    if all(b.ground_truth is not None for b in bundles):
        batch["gt"] = np.stack([b.ground_truth.data.transpose(2, 0, 1) for b in bundles])
    return batch


class Forward(NamedTuple):
    i_rr: Tensor
    f_r: Tensor
    f_pr: Tensor


class Prediction(NamedTuple):
    i_rr: ImagePlane
    i_vt: JndMap
    f_r: np.ndarray
    f_pr: np.ndarray


class HmJndNet:
    """Parameters and forward pass of the whole network.

    All weights live in ``self.store`` under dotted paths (``hmpf.*``,
    ``hmfa.*`` or the ablation stand-ins).
    """

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        if cfg.use_hmpf:
            self.prior = Hmpf(self.store, cfg.channels, cfg.se_reduction, rng)
        else:
            self.prior = ConcatPrior(self.store, cfg.channels, rng)
        self.hmfa = Hmfa(self.store, cfg.channels, cfg.heads, cfg.window, cfg.blocks, rng,
                         cfg.mlp_ratio, cfg.se_reduction, attention=cfg.use_hmfa)

    def forward(self, batch: dict[str, np.ndarray], trace: list | None = None) -> Forward:
        f_pr = self.prior(Tensor(batch["saliency"]), Tensor(batch["depth"]),
                          Tensor(batch["segmentation"]))
        rgb = Tensor(batch["rgb"])
        f_r = self.hmfa.embed_rgb(rgb)
        f_an = hmfa_forward(f_pr, f_r, self.hmfa, trace)
        return Forward(reshape_head(f_an, rgb, self.hmfa), f_r, f_pr)

    def predict(self, bundle: ModalityBundle) -> Prediction:
        return predict(bundle, self)

    def save(self, directory, extra: dict[str, str] | None = None):
        meta = dict(self.cfg.to_strings())
        meta.update(extra or {})
        return save_params(self.store, directory, meta)

    @classmethod
    def load(cls, directory) -> "HmJndNet":
        meta, state = load_state(directory)
        net = cls(ModelConfig.from_strings(meta))
        net.store.load_state_dict(state)
        return net


def visibility_threshold(i_ori: np.ndarray, i_rr: np.ndarray) -> JndMap:
    """Channel-mean absolute difference of two ``(H, W, 3)`` images."""
    return JndMap(np.abs(i_ori - i_rr).mean(axis=2))


def predict(bundle: ModalityBundle, net: HmJndNet) -> Prediction:
    out = net.forward(stack_bundles([bundle], net.cfg))
    i_rr = out.i_rr.data[0].transpose(1, 2, 0)
    return Prediction(ImagePlane(i_rr), visibility_threshold(bundle.rgb.data, i_rr),
                      out.f_r.data, out.f_pr.data)

