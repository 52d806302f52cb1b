"""
Synthetic terraced wadis
========================

The real archaeological rasters are not redistributable, so training runs on
a deterministic stand-in: a smooth terrain with a sloped wadi, terrace bands
across it, and low stone walls imprinted into the elevation model *before*
the terrain derivatives are computed. Slope therefore carries the sharpest
wall signal; the hillshaded RGB sees the walls too, plus a faint tint.
"""

import tempfile

import numpy as np

from terrafuse import synth
from terrafuse.data import CHANNELS, compute_norm_stats, load_split, normalize

# %%
# One 64x64 patch: 11 channels plus a class mask (0 background, 1 terrace, 2 wall).
patch, mask = synth.generate_patch(seed=0, index=0, size=64)
print("patch", patch.shape, patch.dtype, "mask", mask.shape, mask.dtype)
print("class fractions", np.bincount(mask.ravel(), minlength=3) / mask.size)

# %%
# Per-channel contrast between wall pixels and background: how much each
# channel "sees" the walls, in units of the background spread.
wall, bg = mask == 2, mask == 0
for name, plane in zip(CHANNELS, patch):
    sep = abs(plane[wall].mean() - plane[bg].mean()) / (plane[bg].std() + 1e-9)
    print(f"{name:8s} range [{plane.min():9.3f}, {plane.max():9.3f}]  wall contrast {sep:5.2f}")

# %%
# A small dataset on disk: MCR rasters, MSK masks and a manifest with an
# 80/20 train/val split. Normalization statistics come from train only.
out = tempfile.mkdtemp()
synth.generate_dataset(10, 64, seed=0, out_dir=out)
train = load_split(out, "train")
stats = compute_norm_stats(train.patches)
z = np.stack([normalize(p, stats) for p in train.patches])
print("train ids", train.ids)
print("normalized mean/std", z.mean(axis=(0, 2, 3)).round(4), z.std(axis=(0, 2, 3)).round(4))
