"""Confusion counts, challenge foreground IoU, and per-class precision/recall/F1/IoU.

Rows of the confusion matrix are the true class, columns the predicted class.
Class 0 is background; 1 terrace; 2 wall.

0/0 conventions: a ratio whose denominator is zero is 1.0 when the class is
absent from both prediction and truth and 0.0 otherwise. Foreground IoU is
1.0 when neither map has any foreground pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

CLASS_NAMES = ("background", "terrace", "wall")
N_CLASSES = 3


def _check_pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    for name, a in (("prediction", pred), ("truth", truth)):
        if a.size and (a.min() < 0 or a.max() >= N_CLASSES):
            raise ValueError(f"{name} contains values outside 0..{N_CLASSES - 1}")
    return pred.astype(np.int64), truth.astype(np.int64)


def confusion(pred, truth) -> np.ndarray:
    """3x3 int64 counts; entry [t, p] counts pixels of true class t predicted as p."""
    pred, truth = _check_pair(pred, truth)
    return np.bincount((truth * N_CLASSES + pred).ravel(), minlength=N_CLASSES ** 2).reshape(N_CLASSES, N_CLASSES)


def foreground_iou_from_confusion(cm: np.ndarray) -> float:
    """|P == T > 0| / |P > 0 or T > 0| from counts."""
    matched = int(cm[1, 1] + cm[2, 2])
    union = int(cm.sum() - cm[0, 0])
    return 1.0 if union == 0 else matched / union


def foreground_iou(pred, truth) -> float:
    return foreground_iou_from_confusion(confusion(pred, truth))


def _ratio(num: int, den: int, present: bool) -> float:
    if den == 0:
        return 0.0 if present else 1.0
    return num / den


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    iou: float


@dataclass
class MetricsReport:
    per_class: Dict[str, ClassMetrics]
    foreground_iou: float
    miou: float
    confusion: np.ndarray
    pixels: int = field(init=False)

    def __post_init__(self):
        self.pixels = int(self.confusion.sum())

    def items(self) -> List[tuple]:
        """Flat (key, value) pairs in a fixed order."""
        out = [("foreground_iou", self.foreground_iou), ("miou", self.miou)]
        for name in CLASS_NAMES[1:]:
            m = self.per_class[name]
            out += [(f"{name}.precision", m.precision), (f"{name}.recall", m.recall),
                    (f"{name}.f1", m.f1), (f"{name}.iou", m.iou)]
        out.append(("pixels", self.pixels))
        for t in range(N_CLASSES):
            for p in range(N_CLASSES):
                out.append((f"confusion.{t}{p}", int(self.confusion[t, p])))
        return out

    def to_kv(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.items())

    def to_table(self) -> str:
        lines = [f"{'':10s} {'precision':>9s} {'recall':>9s} {'F1':>9s} {'IoU':>9s}"]
        for name in CLASS_NAMES[1:]:
            m = self.per_class[name]
            lines.append(f"{name:10s} {m.precision:9.4f} {m.recall:9.4f} {m.f1:9.4f} {m.iou:9.4f}")
        lines.append(f"foreground IoU {self.foreground_iou:.4f}   mIoU {self.miou:.4f}   pixels {self.pixels}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out


def class_metrics(cm: np.ndarray, c: int) -> ClassMetrics:
    tp = int(cm[c, c])
    fp = int(cm[:, c].sum() - tp)
    fn = int(cm[c, :].sum() - tp)
    present = (tp + fp + fn) > 0
    precision = _ratio(tp, tp + fp, present)
    recall = _ratio(tp, tp + fn, present)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, present)
    iou = _ratio(tp, tp + fp + fn, present)
    return ClassMetrics(precision, recall, f1, iou)


def report_from_confusion(cm: np.ndarray) -> MetricsReport:
    """Table-style report; mIoU averages the two foreground classes only."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.shape != (N_CLASSES, N_CLASSES) or (cm < 0).any():
        raise ValueError("confusion matrix must be 3x3 with non-negative counts")
    per_class = {name: class_metrics(cm, c) for c, name in enumerate(CLASS_NAMES)}
    miou = (per_class["terrace"].iou + per_class["wall"].iou) / 2.0
    return MetricsReport(per_class, foreground_iou_from_confusion(cm), miou, cm)


def full_report(pred=None, truth=None, cm: Optional[np.ndarray] = None) -> MetricsReport:
    if cm is None:
        cm = confusion(pred, truth)
    return report_from_confusion(cm)


def pooled_confusion(pairs: Iterable) -> np.ndarray:
    """Sum confusion counts over (pred, truth) pairs (micro pooling)."""
    total = np.zeros((N_CLASSES, N_CLASSES), np.int64)
    for pred, truth in pairs:
        total += confusion(pred, truth)
    return total


def mean_patch_foreground_iou(pairs: Iterable) -> float:
    """Per-patch averaged alternative to pooled scoring."""
    scores = [foreground_iou(p, t) for p, t in pairs]
    return float(np.mean(scores)) if scores else 1.0


def iou_from_f1(f1: float) -> float:
    return f1 / (2.0 - f1)
