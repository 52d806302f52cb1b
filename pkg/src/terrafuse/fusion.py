"""Soft-score fusion of two probability maps and the final class decision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def fuse(unet_probs: np.ndarray, deeplab_probs: np.ndarray, cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """alpha * unet + (1 - alpha) * deeplab, per pixel and class.

    Works on a single (3,H,W) map or a batch (N,3,H,W). The boundary weights
    return the selected input unchanged.
    """
    a = np.asarray(unet_probs)
    b = np.asarray(deeplab_probs)
    if a.shape != b.shape:
        raise ValueError(f"probability maps differ in shape: {a.shape} vs {b.shape}")
    if cfg.alpha == 1.0:
        return a.copy()
    if cfg.alpha == 0.0:
        return b.copy()
    return cfg.alpha * a + (1.0 - cfg.alpha) * b


def argmax_map(probs: np.ndarray) -> np.ndarray:
    """Class axis is -3; ties resolve to the lowest class index (background first)."""
    return np.argmax(np.asarray(probs), axis=-3).astype(np.uint8)
