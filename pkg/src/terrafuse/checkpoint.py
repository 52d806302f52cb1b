"""TFW1 checkpoint files.

Layout (little-endian): ``b"TFW1"``, u32 header_len, UTF-8 header of
``key=value`` lines, then one record per tensor: u16 name_len, name bytes,
u8 ndim, ndim x u32 dims, float32 data. The ``created`` header line is the
only non-deterministic content.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .data import NormStats
from .formats import BadMagic, FormatError, Truncated
from .nets import EncoderConfig, Model, build_model

MAGIC = b"TFW1"
MAX_NDIM = 8


class DuplicateName(FormatError):
    pass


@dataclass
class ModelCheckpoint:
    kind: str
    cfg: EncoderConfig
    seed: int
    epoch: int
    norm: NormStats
    beta: float
    state: Dict[str, np.ndarray]
    meta: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, norm: NormStats, epoch: int, beta: float, **meta) -> "ModelCheckpoint":
        state = {k: v.astype(np.float32).copy() for k, v in model.state_dict().items()}
        return cls(model.kind, model.cfg, model.seed, epoch, norm, beta, state,
                   {k: str(v) for k, v in meta.items()})

    def build(self) -> Model:
        model = build_model(self.kind, self.cfg, self.seed)
        model.load_state_dict(self.state)
        model.eval()
        return model


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def encode_checkpoint(ckpt: ModelCheckpoint, created: str = None) -> bytes:
    if created is None:
        created = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    header = {
        "kind": ckpt.kind,
        "in_channels": str(ckpt.cfg.in_channels),
        "stage_widths": ",".join(str(w) for w in ckpt.cfg.stage_widths),
        "blocks_per_stage": str(ckpt.cfg.blocks_per_stage),
        "seed": str(ckpt.seed),
        "epoch": str(ckpt.epoch),
        "beta": repr(float(ckpt.beta)),
        "norm_mean": _floats(ckpt.norm.mean),
        "norm_std": _floats(ckpt.norm.std),
    }
    for k, v in sorted(ckpt.meta.items()):
        header.setdefault(k, v)
    header["created"] = created
    text = "".join(f"{k}={v}\n" for k, v in header.items()).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(text)), text]
    for name in sorted(ckpt.state):
        arr = np.ascontiguousarray(ckpt.state[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt: ModelCheckpoint, created: str = None) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt, created))


class _Reader:
    def __init__(self, path, buf: bytes):
        self.path, self.buf, self.pos = path, buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(self.path, self.pos + n, len(self.buf))
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def decode_checkpoint(buf: bytes, path="<bytes>") -> ModelCheckpoint:
    r = _Reader(path, buf)
    if len(buf) >= 4 and buf[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    r.take(4)
    (hlen,) = struct.unpack("<I", r.take(4))
    try:
        text = r.take(hlen).decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: header is not UTF-8") from e
    header = {}
    for line in text.splitlines():
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed header line {line!r}")
        header[k] = v
    state = {}
    while r.pos < len(buf):
        (nlen,) = struct.unpack("<H", r.take(2))
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: tensor name is not UTF-8") from e
        (ndim,) = struct.unpack("<B", r.take(1))
        if ndim > MAX_NDIM:
            raise FormatError(f"{path}: tensor {name!r} claims {ndim} dims (max {MAX_NDIM})")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = math.prod(dims)  # python ints: no overflow on corrupt dims
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
        if name in state:
            raise DuplicateName(f"{path}: duplicate tensor name {name!r}")
        state[name] = data
    try:
        cfg = EncoderConfig(
            in_channels=int(header["in_channels"]),
            stage_widths=[int(w) for w in header["stage_widths"].split(",")],
            blocks_per_stage=int(header["blocks_per_stage"]),
        )
        norm = NormStats(tuple(float(x) for x in header["norm_mean"].split(",")),
                         tuple(float(x) for x in header["norm_std"].split(",")))
        known = {"kind", "in_channels", "stage_widths", "blocks_per_stage", "seed", "epoch", "beta",
                 "norm_mean", "norm_std"}
        meta = {k: v for k, v in header.items() if k not in known}
        return ModelCheckpoint(header["kind"], cfg, int(header["seed"]), int(header["epoch"]), norm,
                               float(header["beta"]), state, meta)
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: invalid header ({e})") from e


def load_checkpoint(path) -> ModelCheckpoint:
    return decode_checkpoint(Path(path).read_bytes(), path)


def strip_timestamp(buf: bytes) -> bytes:
    """Checkpoint bytes with the ``created=`` header line removed."""
    (hlen,) = struct.unpack("<I", buf[4:8])
    lines = buf[8:8 + hlen].split(b"\n")
    kept = b"\n".join(line for line in lines if not line.startswith(b"created="))
    return buf[:4] + kept + buf[8 + hlen:]


def checkpoint_digest(path) -> str:
    """SHA-256 of a checkpoint file, ignoring its creation timestamp."""
    return hashlib.sha256(strip_timestamp(Path(path).read_bytes())).hexdigest()
