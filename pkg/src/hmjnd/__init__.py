"""Forecast per-pixel visibility thresholds from an RGB image and its
saliency, depth and segmentation priors, then use them to evaluate and
to compress.

The network runs on a small reverse-mode autodiff engine over numpy
(:mod:`hmjnd.autodiff`). Everything else is plain numpy and scipy.
"""

__version__ = "0.1.0"

from .imageio import ImagePlane, JndMap, ModalityBundle, load_bundle, save_bundle
from .model import HmJndNet, ModelConfig, predict
from .train import TrainConfig, train

__all__ = [
    "ImagePlane", "JndMap", "ModalityBundle", "load_bundle", "save_bundle",
    "HmJndNet", "ModelConfig", "predict", "TrainConfig", "train", "__version__",
]
