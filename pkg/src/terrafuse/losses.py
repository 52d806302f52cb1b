"""Cross-entropy + soft Dice training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, softmax_channels


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.5
    dice_eps: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.dice_eps <= 0:
            raise ValueError(f"dice_eps must be positive, got {self.dice_eps}")


def _check_target(target: np.ndarray, n_classes: int) -> np.ndarray:
    target = np.asarray(target)
    bad = (target < 0) | (target >= n_classes)
    if bad.any():
        raise ValueError(f"target contains class values outside 0..{n_classes - 1}: {np.unique(target[bad]).tolist()}")
    return target.astype(np.int64)


def one_hot(target: np.ndarray, n_classes: int = 3, dtype=np.float32) -> np.ndarray:
    """(N,H,W) labels -> (N,C,H,W) indicator array."""
    target = _check_target(target, n_classes)
    return (target[:, None] == np.arange(n_classes).reshape(1, -1, 1, 1)).astype(dtype)


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[true class]."""
    n, c, h, w = logits.shape
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    y = one_hot(target, c, logits.dtype)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    npix = n * h * w
    loss = -(logp * y).sum() / npix

    def backward(g):
        return (g * (np.exp(logp) - y) / npix,)

    return Tensor._from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def soft_dice_per_class(probs: Tensor, target: np.ndarray, eps: float = 1.0) -> Tensor:
    """Per-class soft Dice loss (C,), pooled over the whole batch.

    TP = sum p*y, FP = sum p*(1-y), FN = sum (1-p)*y and
    loss = 1 - (2TP + eps) / (2TP + FN + FP + eps).
    """
    n, c, h, w = probs.shape
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} does not match probs {probs.shape}")
    y = Tensor(one_hot(target, c, probs.dtype))
    axes = (0, 2, 3)
    tp = (probs * y).sum(axis=axes)
    fp = (probs * (1.0 - y)).sum(axis=axes)
    fn = ((1.0 - probs) * y).sum(axis=axes)
    return 1.0 - (2.0 * tp + eps) / (2.0 * tp + fn + fp + eps)


def soft_dice_loss(probs: Tensor, target: np.ndarray, eps: float = 1.0) -> Tensor:
    """Batch-pooled soft Dice averaged over all classes, background included."""
    return soft_dice_per_class(probs, target, eps).mean()


def total_loss(logits: Tensor, target: np.ndarray, cfg: LossConfig = LossConfig()) -> Tensor:
    """beta * CE + (1 - beta) * Dice; a pure term is returned untouched at beta in {0, 1}."""
    if cfg.beta == 1.0:
        return cross_entropy(logits, target)
    dice = soft_dice_loss(softmax_channels(logits), target, cfg.dice_eps)
    if cfg.beta == 0.0:
        return dice
    return cfg.beta * cross_entropy(logits, target) + (1.0 - cfg.beta) * dice
