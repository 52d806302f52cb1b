"""Channel layout, dataset loading and per-channel normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .formats import read_manifest, read_mask, read_patch

logger = logging.getLogger(__name__)

CHANNELS: Tuple[str, ...] = (
    "red", "green", "blue",
    "aspect", "dtm", "flowacc", "flowdir", "pcurv", "slope", "tcurv", "twi",
)
STD_FLOOR = 1e-6


def channel_index(name: str) -> int:
    try:
        return CHANNELS.index(name)
    except ValueError:
        raise KeyError(f"unknown channel {name!r}; expected one of {CHANNELS}") from None


@dataclass(frozen=True)
class NormStats:
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(CHANNELS) or len(self.std) != len(CHANNELS):
            raise ValueError(f"NormStats needs {len(CHANNELS)} means and stds")

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, np.float64)

    @property
    def std_array(self) -> np.ndarray:
        return np.asarray(self.std, np.float64)


def compute_norm_stats(patches: Sequence[np.ndarray]) -> NormStats:
    """Per-channel mean/std pooled over every pixel of ``patches``.

    A constant channel gets std floored at 1e-6 (with a warning), so it
    normalizes to zero.
    """
    if not len(patches):
        raise ValueError("cannot compute normalization stats from an empty split")
    c = patches[0].shape[0]
    total = np.zeros(c)
    total_sq = np.zeros(c)
    count = 0
    for p in patches:
        x = p.astype(np.float64).reshape(c, -1)
        total += x.sum(axis=1)
        count += x.shape[1]
    mean = total / count
    for p in patches:
        x = p.astype(np.float64).reshape(c, -1)
        total_sq += ((x - mean[:, None]) ** 2).sum(axis=1)
    std = np.sqrt(total_sq / count)
    low = std < STD_FLOOR
    if low.any():
        names = [CHANNELS[i] if c == len(CHANNELS) else str(i) for i in np.flatnonzero(low)]
        logger.warning("constant channel(s) %s: std floored at %g", ", ".join(names), STD_FLOOR)
        std = np.maximum(std, STD_FLOOR)
    return NormStats(tuple(mean.tolist()), tuple(std.tolist()))


def normalize(patch: np.ndarray, stats: NormStats) -> np.ndarray:
    out = (patch.astype(np.float64) - stats.mean_array[:, None, None]) / stats.std_array[:, None, None]
    return out.astype(np.float32)


@dataclass
class Split:
    ids: List[str]
    patches: List[np.ndarray]
    masks: List[np.ndarray]


def load_split(data_dir, split: str) -> Split:
    """Read every patch/mask pair listed under ``split`` in ``data_dir/manifest.txt``."""
    root = Path(data_dir)
    entries = read_manifest(root / "manifest.txt")
    ids = [pid for pid, s in entries if s == split]
    patches = [read_patch(root / f"{pid}.mcr") for pid in ids]
    masks = [read_mask(root / f"{pid}.msk") for pid in ids]
    for pid, p, m in zip(ids, patches, masks):
        if p.shape[1:] != m.shape:
            raise ValueError(f"{pid}: patch is {p.shape[1:]} but mask is {m.shape}")
    return Split(ids, patches, masks)
