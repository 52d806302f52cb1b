"""Test-time feature importance by zeroing one input channel at a time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .checkpoint import ModelCheckpoint
from .data import CHANNELS, NormStats, Split, normalize
from .fusion import FusionConfig, argmax_map, fuse
from .metrics import foreground_iou_from_confusion, pooled_confusion
from .trainer import predict_probs

_IDENTITY = NormStats((0.0,) * len(CHANNELS), (1.0,) * len(CHANNELS))


def ablate_channel(patch: np.ndarray, channel_index: int) -> np.ndarray:
    """Copy of a raw patch with one channel replaced by zeros."""
    if not 0 <= channel_index < patch.shape[0]:
        raise IndexError(f"channel index {channel_index} out of range 0..{patch.shape[0] - 1}")
    out = patch.copy()
    out[channel_index] = 0
    return out


@dataclass
class AblationReport:
    baseline: float
    ablated: Dict[str, float]

    @property
    def importance(self) -> Dict[str, float]:
        return {k: self.baseline - v for k, v in self.ablated.items()}

    def ranking(self):
        """Channel names, most important first (ties keep channel order)."""
        imp = self.importance
        return sorted(imp, key=lambda k: (-imp[k], CHANNELS.index(k)))

    def items(self):
        out = [("baseline", self.baseline)]
        out += [(f"ablated.{k}", self.ablated[k]) for k in CHANNELS]
        out += [(f"importance.{k}", self.importance[k]) for k in CHANNELS]
        return out

    def to_kv(self) -> str:
        return "".join(f"{k}={float(v)!r}\n" for k, v in self.items())

    def to_table(self) -> str:
        header = f"{'removed':10s} {'IoU':>7s} {'drop':>7s}"
        lines = [header, f"{'(none)':10s} {self.baseline:7.4f} {0.0:7.4f}"]
        for k in CHANNELS:
            lines.append(f"{k:10s} {self.ablated[k]:7.4f} {self.importance[k]:7.4f}")
        return "\n".join(lines) + "\n"


def _score(ckpts: Sequence[ModelCheckpoint], models, split: Split, fusion: FusionConfig,
           channel: Optional[int], normalized: bool) -> float:
    probs = []
    for ck, model in zip(ckpts, models):
        if normalized:
            # zero in input space; identity stats make predict_probs' own normalize a no-op
            patches = [normalize(p, ck.norm) for p in split.patches]
            norm = _IDENTITY
        else:
            patches, norm = split.patches, ck.norm
        if channel is not None:
            patches = [ablate_channel(p, channel) for p in patches]
        probs.append(predict_probs(model, norm, patches))
    fused = probs[0] if len(probs) == 1 else fuse(probs[0], probs[1], fusion)
    return foreground_iou_from_confusion(pooled_confusion(zip(argmax_map(fused), split.masks)))


def run_ablation(ckpts: Sequence[ModelCheckpoint], split: Split, fusion: FusionConfig = FusionConfig(),
                 zero_after_normalization: bool = True, order: Optional[Sequence[str]] = None) -> AblationReport:
    """Baseline pooled foreground IoU plus one pass per zeroed channel.

    With two checkpoints (U-Net first) the fused prediction is scored; with one,
    that model alone. By default the zero is applied in the model's input
    space (after normalization, i.e. the channel's training mean), the same
    fill used for augmentation borders; ``zero_after_normalization=False``
    zeroes the raw values instead, which for channels far from zero (RGB in
    0..255) is a large out-of-distribution shift rather than a removal.
    ``order`` permutes the evaluation order of the channels. Inference only.
    """
    order = tuple(order or CHANNELS)
    if sorted(order) != sorted(CHANNELS):
        raise ValueError("order must be a permutation of the channel names")
    if not 1 <= len(ckpts) <= 2:
        raise ValueError("run_ablation takes one or two checkpoints")
    for ck in ckpts:
        if ck.cfg.in_channels != len(CHANNELS):
            raise ValueError(f"checkpoint expects {ck.cfg.in_channels} channels, data has {len(CHANNELS)}")
    for p in split.patches:
        if p.shape[0] != len(CHANNELS):
            raise ValueError(f"patch has {p.shape[0]} channels, expected {len(CHANNELS)}")
    models = [ck.build() for ck in ckpts]
    baseline = _score(ckpts, models, split, fusion, None, zero_after_normalization)
    ablated = {name: _score(ckpts, models, split, fusion, CHANNELS.index(name), zero_after_normalization)
               for name in order}
    return AblationReport(baseline, {k: ablated[k] for k in CHANNELS})
