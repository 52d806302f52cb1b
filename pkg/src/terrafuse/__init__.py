"""Two-network terrain segmentation with soft-score fusion, from scratch on numpy."""

from .data import CHANNELS, NormStats, compute_norm_stats, normalize
from .fusion import FusionConfig, argmax_map, fuse
from .losses import LossConfig, total_loss
from .metrics import full_report, foreground_iou
from .nets import EncoderConfig, build_deeplab_lite, build_unet, forward
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "CHANNELS", "NormStats", "compute_norm_stats", "normalize",
    "FusionConfig", "argmax_map", "fuse",
    "LossConfig", "total_loss",
    "full_report", "foreground_iou",
    "EncoderConfig", "build_deeplab_lite", "build_unet", "forward",
    "Tensor", "no_grad",
]
