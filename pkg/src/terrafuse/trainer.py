"""Training loop, evaluation and inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentConfig, augment
from .checkpoint import ModelCheckpoint
from .data import CHANNELS, NormStats, Split, compute_norm_stats, load_split, normalize
from .formats import read_patch, write_probs
from .fusion import argmax_map
from .losses import LossConfig, total_loss
from .metrics import pooled_confusion, report_from_confusion, MetricsReport
from .nets import EncoderConfig, Model, build_model, forward
from .optim import AdamWState, adamw_step
from .tensor import Tensor, no_grad, softmax_channels

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass
class TrainConfig:
    model: str = "unet"
    epochs: int = 200
    batch_size: int = 8
    lr: float = 0.001
    weight_decay: float = 0.01
    beta: float = 0.5
    seed: int = 0
    stage_widths: Tuple[int, ...] = (16, 32, 64, 128)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    # "val_iou" keeps the best validation epoch; "last" keeps the final one
    select: str = "val_iou"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.select not in ("val_iou", "last"):
            raise ValueError(f"select must be 'val_iou' or 'last', got {self.select!r}")


@dataclass
class History:
    loss: List[float] = field(default_factory=list)
    val_iou: List[float] = field(default_factory=list)
    best_epoch: int = 0


def predict_probs(model: Model, norm: NormStats, patches: Sequence[np.ndarray], batch_size: int = 8) -> np.ndarray:
    """Eval-mode softmax maps (N,3,H,W) for raw (un-normalized) patches."""
    out = []
    with no_grad():
        for i in range(0, len(patches), batch_size):
            x = np.stack([normalize(p, norm) for p in patches[i:i + batch_size]])
            out.append(softmax_channels(forward(model, Tensor(x), training=False)).data)
    return np.concatenate(out) if out else np.zeros((0, 3, 0, 0), np.float32)


def evaluate(model: Model, norm: NormStats, split: Split, probs: Optional[np.ndarray] = None) -> MetricsReport:
    """Pooled metrics of a model (or precomputed probabilities) on a split."""
    if probs is None:
        probs = predict_probs(model, norm, split.patches)
    preds = argmax_map(probs)
    return report_from_confusion(pooled_confusion(zip(preds, split.masks)))


def train(cfg: TrainConfig, data_dir, on_epoch=None) -> Tuple[ModelCheckpoint, History]:
    """Train one model on the manifest's train split.

    Shuffling and augmentation draw from separate seeded streams; the model is
    initialized from ``cfg.seed``. Validation (never augmented) runs after every
    epoch and the best validation foreground IoU wins (first epoch on ties).
    """
    train_split = load_split(data_dir, "train")
    val_split = load_split(data_dir, "val")
    if not train_split.ids:
        raise ValueError(f"{data_dir}: manifest has no training patches")
    if train_split.patches[0].shape[0] != len(CHANNELS):
        raise ValueError(f"expected {len(CHANNELS)} channels, got {train_split.patches[0].shape[0]}")

    norm = compute_norm_stats(train_split.patches)
    xs = [normalize(p, norm) for p in train_split.patches]
    ys = train_split.masks
    model = build_model(cfg.model, EncoderConfig(stage_widths=list(cfg.stage_widths)), cfg.seed)
    params = model.named_parameters()
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    loss_cfg = LossConfig(beta=cfg.beta)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    aug_rng = np.random.default_rng([cfg.seed, 2])
    use_aug = not cfg.augment.is_identity()

    history = History()
    best_state, best_iou, best_epoch = None, -1.0, 0
    n = len(xs)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            if use_aug:
                pairs = [augment(xs[i], ys[i], cfg.augment, aug_rng) for i in idx]
            else:
                pairs = [(xs[i], ys[i]) for i in idx]
            x = Tensor(np.stack([p for p, _ in pairs]))
            y = np.stack([m for _, m in pairs])
            loss = total_loss(forward(model, x, training=True), y, loss_cfg)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLossError(epoch, b, value)
            model.zero_grad()
            loss.backward()
            adamw_step(params, opt)
            total += value * len(idx)
            seen += len(idx)
        history.loss.append(total / seen)

        if val_split.ids:
            iou = evaluate(model, norm, val_split).foreground_iou
            history.val_iou.append(iou)
        else:
            iou = float("nan")
        keep = cfg.select == "last" or not val_split.ids or iou > best_iou
        if keep:
            best_iou = iou
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        logger.info("%s epoch %d loss %.5f val_iou %.4f", cfg.model, epoch, history.loss[-1], iou)
        if on_epoch is not None:
            on_epoch(epoch, history)

    model.load_state_dict(best_state)
    history.best_epoch = best_epoch
    ckpt = ModelCheckpoint.from_model(model, norm, best_epoch, cfg.beta, val_iou=repr(float(best_iou)))
    return ckpt, history


def predict_files(ckpt: ModelCheckpoint, inputs: Sequence, out_dir) -> List[Path]:
    """Write ``<stem>.prb`` for each MCR input; returns output paths in input order."""
    model = ckpt.build()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in inputs:
        patch = read_patch(path)
        if patch.shape[0] != ckpt.cfg.in_channels:
            raise ValueError(f"{path}: {patch.shape[0]} channels, checkpoint expects {ckpt.cfg.in_channels}")
        probs = predict_probs(model, ckpt.norm, [patch])[0]
        target = out / (Path(path).stem + ".prb")
        write_probs(target, probs)
        written.append(target)
    return written
