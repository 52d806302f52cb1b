"""
Two networks, one soft vote
===========================

Train a U-Net and a DeepLab-style network (atrous pyramid pooling over a
dilated encoder) on the synthetic terrain, then fuse their per-pixel class
probabilities as ``alpha * P_unet + (1 - alpha) * P_deeplab``.

Defaults are sized to finish in a couple of minutes. Set ``EPOCHS=200`` and
``PATCHES=20`` in the environment for the full desk-scale recipe.
"""

import os
import tempfile

import numpy as np

from terrafuse import synth
from terrafuse.data import load_split
from terrafuse.fusion import FusionConfig, argmax_map, fuse
from terrafuse.metrics import full_report
from terrafuse.trainer import TrainConfig, predict_probs, train

EPOCHS = int(os.environ.get("EPOCHS", 30))
PATCHES = int(os.environ.get("PATCHES", 10))

data = tempfile.mkdtemp()
synth.generate_dataset(PATCHES, 64, seed=0, out_dir=data)
val = load_split(data, "val")

# %%
# Training: AdamW, CE + soft Dice (beta = 0.5), augmentation on, the
# checkpoint with the best validation foreground IoU is kept.
ckpts = {}
for kind in ("unet", "deeplab"):
    ckpt, history = train(TrainConfig(model=kind, epochs=EPOCHS), data)
    ckpts[kind] = ckpt
    print(f"{kind:8s} params {ckpt.build().num_parameters():,}  best epoch {history.best_epoch}"
          f"  val IoU {max(history.val_iou):.3f}")

# %%
# Soft fusion across alpha. alpha = 1 is the U-Net alone, alpha = 0 DeepLab alone.
probs = {k: predict_probs(ck.build(), ck.norm, val.patches) for k, ck in ckpts.items()}
truth = np.stack(val.masks)
for alpha in np.linspace(0, 1, 5):
    fused = fuse(probs["unet"], probs["deeplab"], FusionConfig(float(alpha)))
    print(f"alpha {alpha:.2f}  foreground IoU {full_report(argmax_map(fused), truth).foreground_iou:.4f}")

print(full_report(argmax_map(fuse(probs["unet"], probs["deeplab"])), truth).to_table())
