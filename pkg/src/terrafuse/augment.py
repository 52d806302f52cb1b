"""Joint geometric + blur augmentation of an 11-channel patch and its mask.

All geometric steps (resized crop, flips, rotation, affine) are composed into
one output->input affine map and resampled once: bilinear for the raster,
nearest for the mask, zero fill outside (class 0 for the mask). Blur touches
the raster only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    size: Optional[int] = None  # output size; None keeps the input size
    crop_p: float = 0.5
    crop_scale: Tuple[float, float] = (0.5, 1.0)
    crop_ratio: Tuple[float, float] = (0.75, 4 / 3)
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    rotate_p: float = 0.5
    rotate_degrees: Tuple[float, float] = (-180.0, 180.0)
    affine_p: float = 0.5
    translate: float = 0.1
    shear_degrees: float = 10.0
    blur_p: float = 0.5
    blur_sigma: Tuple[float, float] = (0.1, 2.0)
    blur_kernel: int = 5

    def __post_init__(self):
        for name in ("crop_p", "hflip_p", "vflip_p", "rotate_p", "affine_p", "blur_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_scale must lie within (0, 1], got {self.crop_scale}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be a positive odd integer")

    @classmethod
    def identity(cls, size: Optional[int] = None) -> "AugmentConfig":
        return cls(size=size, crop_p=0.0, crop_scale=(1.0, 1.0), hflip_p=0.0, vflip_p=0.0, rotate_p=0.0,
                   rotate_degrees=(0.0, 0.0), affine_p=0.0, translate=0.0, shear_degrees=0.0, blur_p=0.0)

    def is_identity(self) -> bool:
        return self == replace(AugmentConfig.identity(), size=self.size)


def _snap(m: np.ndarray) -> np.ndarray:
    # keep exact flips/180-degree turns exact
    r = np.round(m)
    return np.where(np.abs(m - r) < 1e-9, r, m)


def _sample_map(rng: np.random.Generator, cfg: AugmentConfig, h: int, w: int, out: int):
    """Output (row, col) -> input (row, col) as a 3x3 homogeneous matrix."""
    oc = np.array([(out - 1) / 2.0, (out - 1) / 2.0])
    ic = np.array([(h - 1) / 2.0, (w - 1) / 2.0])

    # resized crop: output square covers a crop window of size (ch, cw) at centre c
    ch, cw, c = float(h), float(w), ic.copy()
    if rng.random() < cfg.crop_p:
        area = h * w * rng.uniform(*cfg.crop_scale)
        log_r = rng.uniform(np.log(cfg.crop_ratio[0]), np.log(cfg.crop_ratio[1]))
        ratio = np.exp(log_r)
        cw = min(np.sqrt(area * ratio), w)
        ch = min(np.sqrt(area / ratio), h)
        c = np.array([rng.uniform(ch / 2, h - ch / 2), rng.uniform(cw / 2, w - cw / 2)]) - 0.5
    a = np.diag([ch / out, cw / out])

    if rng.random() < cfg.hflip_p:
        a = a @ np.diag([1.0, -1.0])
    if rng.random() < cfg.vflip_p:
        a = a @ np.diag([-1.0, 1.0])
    if rng.random() < cfg.rotate_p:
        t = np.radians(rng.uniform(*cfg.rotate_degrees))
        a = a @ np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    shift = np.zeros(2)
    if rng.random() < cfg.affine_p:
        sh = np.tan(np.radians(rng.uniform(-cfg.shear_degrees, cfg.shear_degrees)))
        a = a @ np.array([[1.0, 0.0], [sh, 1.0]])
        shift = rng.uniform(-cfg.translate, cfg.translate, 2) * np.array([h, w])
    a = _snap(a)
    offset = _snap(c + shift - a @ oc)
    return a, offset


def augment(patch: np.ndarray, mask: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Return an augmented ``(patch, mask)`` pair; the rng is advanced."""
    c, h, w = patch.shape
    if mask.shape != (h, w):
        raise ValueError(f"patch is {h}x{w} but mask is {mask.shape}")
    out = cfg.size or h
    a, offset = _sample_map(rng, cfg, h, w, out)
    blur = rng.random() < cfg.blur_p
    sigma = rng.uniform(*cfg.blur_sigma) if blur else 0.0

    if np.array_equal(a, np.eye(2)) and np.array_equal(offset, np.zeros(2)) and out == h == w:
        new_patch = patch.copy()
        new_mask = mask.copy()
    else:
        new_patch = np.stack([
            ndimage.affine_transform(plane, a, offset, output_shape=(out, out), order=1,
                                     mode="constant", cval=0.0)
            for plane in patch.astype(np.float32)
        ])
        new_mask = ndimage.affine_transform(mask, a, offset, output_shape=(out, out), order=0,
                                            mode="constant", cval=0)
    if blur:
        radius = cfg.blur_kernel // 2
        new_patch = np.stack([
            ndimage.gaussian_filter(plane, sigma, mode="nearest", radius=radius) for plane in new_patch
        ])
    return new_patch.astype(np.float32), new_mask.astype(np.uint8)
