"""
Forecasting a JND map on synthetic scenes
=========================================

Train a toy-sized network on a handful of synthetic bundles, then look at
the visibility-threshold map it predicts for one of them. Runs in about a
minute on one core.
"""

from pathlib import Path

import numpy as np

from hmjnd import ModelConfig, TrainConfig, train
from hmjnd.imageio import save_image
from hmjnd.synth import synth_dataset

out = Path(__file__).parent / "out" / "forecast"
out.mkdir(parents=True, exist_ok=True)

# each bundle holds rgb, saliency, depth, segmentation and a ground truth
# in which textured, deep, non-salient regions lost their fine detail
data = synth_dataset(4, (32, 32), seed=1)
b = data[0]
print(f"{b.name}: {b.width}x{b.height}, classes {np.unique(b.labels).tolist()}")

model = ModelConfig(channels=16, window=4, heads=2, blocks=1)
cfg = TrainConfig(epochs=400, lr=1e-3, batch_size=4, patch=32, seed=0)
result = train(data, cfg, model)
first, last = result.log[0], result.log[-1]
print(f"loss {first[2]:.3e} -> {last[2]:.3e}  (pixel term {first[4]:.3e} -> {last[4]:.3e})")

# I_vt is the channel mean of |I_ori - I_rr|; brighter = more tolerated change
pred = result.net.predict(b)
vt = 255 * pred.i_vt.thresholds
print(f"threshold (8-bit units): mean {vt.mean():.3f}, max {vt.max():.3f}")

# the map should concentrate where the ground truth changed the image
change = 255 * np.abs(b.ground_truth.data - b.rgb.data).mean(axis=2)
print(f"correlation with the ground-truth edit: {np.corrcoef(vt.ravel(), change.ravel())[0, 1]:.3f}")

save_image(b.rgb, out / "rgb.ppm")
save_image(pred.i_rr, out / "i_rr.ppm")
save_image(pred.i_vt.visualize(), out / "i_vt.pgm")
print(f"images written to {out}")
