"""Binary raster formats and the dataset manifest.

All integers and floats are little-endian.

MCR  ``b"MCR1"``, u32 H, u32 W, u32 C (=11), then C*H*W float32 in (c, h, w) order
MSK  ``b"MSK1"``, u32 H, u32 W, then H*W uint8 row-major, values in {0, 1, 2}
PRB  ``b"PRB1"``, u32 H, u32 W, u32 K (=3), then K*H*W float32 in (k, h, w) order

Manifest is UTF-8 text: ``version=1`` then one ``<id>,<split>`` line per patch.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

PathLike = Union[str, os.PathLike]

N_CHANNELS = 11
N_CLASSES = 3
PRB_SUM_TOL = 1e-3


class FormatError(ValueError):
    """Base class for malformed files."""


class BadMagic(FormatError):
    pass


class Truncated(FormatError):
    def __init__(self, path, expected: int, actual: int):
        super().__init__(f"{path}: truncated, expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class ChannelCountError(FormatError):
    pass


class InvalidClass(FormatError):
    pass


class NotNormalized(FormatError):
    pass


class ManifestError(FormatError):
    pass


def _header(path, buf: bytes, magic: bytes, n_dims: int) -> Tuple[int, ...]:
    need = 4 + 4 * n_dims
    if len(buf) < 4:
        raise Truncated(path, need, len(buf))
    if buf[:4] != magic:
        raise BadMagic(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    if len(buf) < need:
        raise Truncated(path, need, len(buf))
    return struct.unpack(f"<{n_dims}I", buf[4:need])


def _body(path, buf: bytes, offset: int, count: int, dtype) -> np.ndarray:
    expected = offset + count * np.dtype(dtype).itemsize
    if len(buf) != expected:
        if len(buf) < expected:
            raise Truncated(path, expected, len(buf))
        raise FormatError(f"{path}: {len(buf) - expected} trailing bytes")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset)


def write_patch(path: PathLike, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[0] != N_CHANNELS:
        raise ChannelCountError(f"patch must be ({N_CHANNELS}, H, W), got {data.shape}")
    c, h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"MCR1" + struct.pack("<3I", h, w, c))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_patch(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    h, w, c = _header(path, buf, b"MCR1", 3)
    if c != N_CHANNELS:
        raise ChannelCountError(f"{path}: {c} channels, expected {N_CHANNELS}")
    return _body(path, buf, 16, c * h * w, "<f4").reshape(c, h, w).astype(np.float32)


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise FormatError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() >= N_CLASSES):
        raise InvalidClass(f"mask values must be in 0..{N_CLASSES - 1}")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(b"MSK1" + struct.pack("<2I", h, w))
        f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def read_mask(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    h, w = _header(path, buf, b"MSK1", 2)
    mask = _body(path, buf, 12, h * w, np.uint8).reshape(h, w).copy()
    if mask.size and mask.max() >= N_CLASSES:
        raise InvalidClass(f"{path}: mask contains class values {sorted(set(np.unique(mask[mask >= N_CLASSES]).tolist()))}")
    return mask


def write_probs(path: PathLike, probs: np.ndarray) -> None:
    probs = np.asarray(probs)
    if probs.ndim != 3 or probs.shape[0] != N_CLASSES:
        raise FormatError(f"probability map must be ({N_CLASSES}, H, W), got {probs.shape}")
    _check_normalized(path, probs)
    k, h, w = probs.shape
    with open(path, "wb") as f:
        f.write(b"PRB1" + struct.pack("<3I", h, w, k))
        f.write(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_probs(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    h, w, k = _header(path, buf, b"PRB1", 3)
    if k != N_CLASSES:
        raise ChannelCountError(f"{path}: {k} classes, expected {N_CLASSES}")
    probs = _body(path, buf, 16, k * h * w, "<f4").reshape(k, h, w).astype(np.float32)
    _check_normalized(path, probs)
    return probs


def _check_normalized(path, probs: np.ndarray) -> None:
    if not np.all(np.isfinite(probs)):
        raise NotNormalized(f"{path}: non-finite probabilities")
    dev = np.abs(probs.astype(np.float64).sum(axis=0) - 1.0)
    if dev.size and dev.max() > PRB_SUM_TOL:
        raise NotNormalized(f"{path}: per-pixel sums deviate from 1 by up to {dev.max():.3g}")


def write_manifest(path: PathLike, entries: List[Tuple[str, str]]) -> None:
    lines = ["version=1"] + [f"{pid},{split}" for pid, split in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: PathLike) -> List[Tuple[str, str]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise ManifestError(f"{path}: not UTF-8 text") from e
    if not lines or lines[0].strip() != "version=1":
        raise ManifestError(f"{path}: first line must be 'version=1'")
    entries = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 2 or parts[1] not in ("train", "val") or not parts[0]:
            raise ManifestError(f"{path}:{n}: expected '<id>,<train|val>', got {line!r}")
        entries.append((parts[0], parts[1]))
    return entries
