"""Deterministic synthetic terraced-wadi patches.

Each patch is a smooth DTM (sloping plane, anisotropic Gaussian bumps, a
meandering wadi channel, LiDAR-like micro-relief). Terraces are leveled
sediment bands across the wadi floor, each closed on its downstream side by a
2 px stone wall imprinted into the DTM as a ridge. Terrain derivatives are
computed *after* the imprint, so the slope channel carries the sharpest wall
signal. RGB is a hillshade of the DTM with speckle and a weak stone tint.

``NOISE_CHANNEL`` names the channel meant to be close to label-free: D8 flow
direction on a DTM whose micro-relief dominates the local drop between
neighbours. It is not perfectly clean, since wall ridges still bend the flow
on and right next to the wall, so codes there are biased.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .data import CHANNELS
from .formats import write_manifest, write_mask, write_patch

NOISE_CHANNEL = "flowdir"
TRAIN_FRACTION = 0.8

# D8 neighbour offsets (dy, dx), code = index
D8_OFFSETS = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


def patch_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, patch index); order of generation is irrelevant."""
    return np.random.default_rng([seed, index])


def _terrain(rng, size: int):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    s = float(size)
    # regional slope: downstream is +y
    dtm = 20.0 - 0.04 * yy + rng.uniform(-0.01, 0.01) * xx
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, s, 2)
        sy, sx = rng.uniform(0.15, 0.45, 2) * s
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        dtm += rng.uniform(-1.5, 2.5) * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))

    center0 = rng.uniform(0.4, 0.6) * s
    amp = rng.uniform(0.0, 0.08) * s
    period = rng.uniform(1.2, 2.5) * s
    phase = rng.uniform(0, 2 * np.pi)
    wadi_x = center0 + amp * np.sin(2 * np.pi * yy / period + phase)
    half_width = rng.uniform(0.14, 0.2) * s
    depth = rng.uniform(2.0, 3.5)
    across = (xx - wadi_x) / half_width
    dtm -= depth * np.exp(-across ** 2)
    return dtm, yy, xx, wadi_x, half_width


def _place_terraces(rng, size, dtm, yy, xx, wadi_x, half_width):
    mask = np.zeros((size, size), np.uint8)
    floor = np.abs(xx - wadi_x) < 0.75 * half_width
    n_terraces = int(rng.integers(2, 4))
    band_len = max(3, int(round(rng.uniform(0.06, 0.11) * size)))
    spacing = (size - 8) / n_terraces
    tilt = rng.uniform(-0.25, 0.25)
    walls = []
    for k in range(n_terraces):
        y_wall = 4 + band_len + k * spacing + rng.uniform(0, max(spacing - band_len - 4, 1))
        u = yy - tilt * (xx - wadi_x)
        wall = floor & (u >= y_wall) & (u < y_wall + 2)
        band = floor & (u >= y_wall - band_len) & (u < y_wall)
        if not wall.any() or not band.any():
            continue
        level = dtm[wall].mean()
        dtm[band] = level + 0.05 * (dtm[band] - dtm[band].mean())
        mask[band] = 1
        walls.append((wall, rng.uniform(0.5, 0.9)))
    for wall, height in walls:
        dtm[wall] = dtm[wall].max() + height
        mask[wall] = 2
    return mask


def _derivatives(dtm):
    q, p = np.gradient(dtm)  # d/dy, d/dx
    t, _ = np.gradient(q)
    s, r = np.gradient(p)
    g2 = p * p + q * q
    slope = np.degrees(np.arctan(np.sqrt(g2)))
    aspect = np.degrees(np.arctan2(-p, q)) % 360.0
    safe = np.where(g2 > 1e-10, g2, 1.0)
    pcurv = np.where(g2 > 1e-10, -(p * p * r + 2 * p * q * s + q * q * t) / (safe * (1 + g2) ** 1.5), 0.0)
    tcurv = np.where(g2 > 1e-10, -(q * q * r - 2 * p * q * s + p * p * t) / (safe * np.sqrt(1 + g2)), 0.0)
    return slope, aspect, pcurv, tcurv


def d8_routing(dtm: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """D8 flow direction codes (0..7, pits coded 0) and upslope cell counts."""
    h, w = dtm.shape
    pad = np.pad(dtm, 1, mode="constant", constant_values=np.inf)
    drops = np.empty((8, h, w))
    for k, (dy, dx) in enumerate(D8_OFFSETS):
        dist = np.hypot(dy, dx)
        drops[k] = (dtm - pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]) / dist
    code = drops.argmax(axis=0)
    has_out = drops.max(axis=0) > 0
    flowdir = np.where(has_out, code, 0)

    acc = np.ones(h * w)
    order = np.argsort(-dtm.ravel(), kind="stable")
    offsets = np.array(D8_OFFSETS)
    for idx in order:
        if not has_out.flat[idx]:
            continue
        i, j = divmod(int(idx), w)
        dy, dx = offsets[code.flat[idx]]
        acc[(i + dy) * w + (j + dx)] += acc[idx]
    return flowdir.astype(np.float64), acc.reshape(h, w)


def _render_rgb(rng, dtm, slope, aspect, mask):
    zen, az = np.radians(45.0), np.radians(315.0)
    sl, asp = np.radians(slope), np.radians(aspect)
    shade = np.clip(np.cos(zen) * np.cos(sl) + np.sin(zen) * np.sin(sl) * np.cos(az - asp), 0, 1)
    soil = np.array([0.78, 0.68, 0.52])
    rgb = soil[:, None, None] * (0.55 + 0.45 * shade)[None]
    rgb[1][mask == 1] += 0.03
    for c, tint in enumerate((-0.06, -0.05, -0.03)):
        rgb[c][mask == 2] += tint
    rgb += rng.normal(0, 0.03, rgb.shape)
    return np.clip(rgb, 0, 1) * 255.0


def generate_patch(seed: int, index: int, size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """One (11,H,W) float32 raster and its (H,W) uint8 mask."""
    if size % 16 or size < 16:
        raise ValueError(f"size must be a positive multiple of 16, got {size}")
    rng = patch_rng(seed, index)
    dtm, yy, xx, wadi_x, half_width = _terrain(rng, size)
    mask = _place_terraces(rng, size, dtm, yy, xx, wadi_x, half_width)
    dtm = dtm + rng.normal(0, 0.03, dtm.shape)
    slope, aspect, pcurv, tcurv = _derivatives(dtm)
    flowdir, flowacc = d8_routing(dtm)
    twi = np.log(flowacc / np.maximum(np.tan(np.radians(slope)), 0.01))
    rgb = _render_rgb(rng, dtm, slope, aspect, mask)
    planes: Dict[str, np.ndarray] = {
        "red": rgb[0], "green": rgb[1], "blue": rgb[2],
        "aspect": aspect, "dtm": dtm, "flowacc": flowacc, "flowdir": flowdir,
        "pcurv": pcurv, "slope": slope, "tcurv": tcurv, "twi": twi,
    }
    data = np.stack([planes[name] for name in CHANNELS]).astype(np.float32)
    return data, mask


def generate_dataset(n_patches: int, size: int, seed: int, out_dir) -> List[Tuple[str, str]]:
    """Write ``<id>.mcr``/``<id>.msk`` pairs and ``manifest.txt`` into ``out_dir``.

    The first ``round(0.8 * n)`` patches (at least one) form the train split.
    """
    if n_patches < 1:
        raise ValueError("n_patches must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out}: directory is not writable")
    n_train = max(1, int(round(TRAIN_FRACTION * n_patches)))
    entries = []
    for i in range(n_patches):
        pid = f"p{i:04d}"
        data, mask = generate_patch(seed, i, size)
        write_patch(out / f"{pid}.mcr", data)
        write_mask(out / f"{pid}.msk", mask)
        entries.append((pid, "train" if i < n_train else "val"))
    write_manifest(out / "manifest.txt", entries)
    return entries
