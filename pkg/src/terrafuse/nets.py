"""Desk-scale U-Net and DeepLabv3+-style networks over 11-channel rasters.

Both share a 4-stage scratch CNN encoder (He-uniform init, BN, ReLU) in
place of a pretrained EfficientNet. Each stage after the first halves H and W
with a 2x2 max pool.

U-Net adds a bottleneck below stage 4 and a transposed-conv decoder with skip
concatenation at every resolution, so inputs must be multiples of 16.

DeepLab-lite dilates the last stage instead of pooling further (output stride
8), runs an ASPP head (1x1, three atrous 3x3 branches, image pooling), and
fuses one full-resolution low-level skip in the decoder. Inputs must be
multiples of 8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvBNReLU, ConvTranspose2d, DoubleConv, Module
from .tensor import Tensor

NUM_CLASSES = 3


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 11
    stage_widths: List[int] = field(default_factory=lambda: [16, 32, 64, 128])
    blocks_per_stage: int = 1

    def __post_init__(self):
        if len(self.stage_widths) != 4:
            raise ValueError(f"stage_widths must have 4 entries, got {list(self.stage_widths)}")
        if self.blocks_per_stage < 1 or self.in_channels < 1:
            raise ValueError("blocks_per_stage and in_channels must be positive")


class Stage(Module):
    def __init__(self, rng, cin, cout, blocks, dilation=1):
        super().__init__()
        self.n = blocks
        for i in range(blocks):
            setattr(self, f"block{i}", DoubleConv(rng, cin if i == 0 else cout, cout, dilation))

    def forward(self, x):
        for i in range(self.n):
            x = getattr(self, f"block{i}")(x)
        return x


class Encoder(Module):
    def __init__(self, rng, cfg: EncoderConfig, last_dilation: int = 1):
        super().__init__()
        cin = cfg.in_channels
        for i, w in enumerate(cfg.stage_widths):
            dil = last_dilation if i == 3 else 1
            setattr(self, f"stage{i + 1}", Stage(rng, cin, w, cfg.blocks_per_stage, dil))
            cin = w

    def forward(self, x) -> List[Tensor]:
        feats = []
        for i in range(4):
            if i > 0:
                x = T.maxpool2d(x, 2)
            x = getattr(self, f"stage{i + 1}")(x)
            feats.append(x)
        return feats


class UNetModel(Module):
    kind = "unet"
    multiple = 16

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        w = list(cfg.stage_widths)
        self.encoder = Encoder(rng, cfg)
        self.bottleneck = DoubleConv(rng, w[3], 2 * w[3])
        cin = 2 * w[3]
        for i in reversed(range(4)):
            setattr(self, f"up{i + 1}", ConvTranspose2d(rng, cin, w[i], 2, 2))
            setattr(self, f"dec{i + 1}", DoubleConv(rng, 2 * w[i], w[i]))
            cin = w[i]
        self.head = Conv2d(rng, w[0], NUM_CLASSES, 1)

    def forward(self, x):
        skips = self.encoder(x)
        x = self.bottleneck(T.maxpool2d(skips[-1], 2))
        for i in reversed(range(4)):
            x = getattr(self, f"up{i + 1}")(x)
            x = getattr(self, f"dec{i + 1}")(T.concat([skips[i], x], axis=1))
        return self.head(x)


class ASPP(Module):
    def __init__(self, rng, cin, cout, rates: Sequence[int]):
        super().__init__()
        self.rates = tuple(rates)
        self.branch0 = ConvBNReLU(rng, cin, cout, k=1)
        for i, r in enumerate(self.rates):
            setattr(self, f"branch{i + 1}", ConvBNReLU(rng, cin, cout, k=3, dilation=r))
        # image-level branch sees a 1x1 map, so no batch norm
        self.pool_conv = Conv2d(rng, cin, cout, 1)
        self.project = ConvBNReLU(rng, cout * (len(self.rates) + 2), cout, k=1)

    def forward(self, x):
        h, w = x.shape[2:]
        outs = [self.branch0(x)]
        outs += [getattr(self, f"branch{i + 1}")(x) for i in range(len(self.rates))]
        pooled = T.relu(self.pool_conv(T.global_avg_pool(x)))
        outs.append(T.bilinear_upsample(pooled, h, w))
        return self.project(T.concat(outs, axis=1))


class DeepLabLiteModel(Module):
    kind = "deeplab"
    multiple = 8

    def __init__(self, cfg: EncoderConfig, seed: int = 0, rates: Sequence[int] = (2, 4, 6)):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        w = list(cfg.stage_widths)
        aspp_width = w[2]
        low_width = w[0]
        self.encoder = Encoder(rng, cfg, last_dilation=2)
        self.aspp = ASPP(rng, w[3], aspp_width, rates)
        self.low_proj = ConvBNReLU(rng, w[0], low_width, k=1)
        self.decoder = ConvBNReLU(rng, aspp_width + low_width, 2 * w[0])
        self.head = Conv2d(rng, 2 * w[0], NUM_CLASSES, 1)

    def forward(self, x):
        feats = self.encoder(x)
        low = self.low_proj(feats[0])
        y = self.aspp(feats[3])
        y = T.bilinear_upsample(y, *low.shape[2:])
        y = self.decoder(T.concat([y, low], axis=1))
        return self.head(y)


Model = Union[UNetModel, DeepLabLiteModel]


def build_unet(cfg: EncoderConfig = None, seed: int = 0) -> UNetModel:
    return UNetModel(cfg or EncoderConfig(), seed)


def build_deeplab_lite(cfg: EncoderConfig = None, seed: int = 0, rates: Sequence[int] = (2, 4, 6)) -> DeepLabLiteModel:
    return DeepLabLiteModel(cfg or EncoderConfig(), seed, rates)


def build_model(kind: str, cfg: EncoderConfig = None, seed: int = 0) -> Model:
    if kind == "unet":
        return build_unet(cfg, seed)
    if kind == "deeplab":
        return build_deeplab_lite(cfg, seed)
    raise ValueError(f"unknown model kind {kind!r} (expected 'unet' or 'deeplab')")


def forward(model: Model, batch, training: bool = False) -> Tensor:
    """Logits (N,3,H,W) for a normalized (N,C,H,W) batch.

    ``training`` selects batch-statistics BN (and running-stat updates).
    """
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.ndim != 4:
        raise ValueError(f"batch must be (N,C,H,W), got shape {batch.shape}")
    if batch.shape[1] != model.cfg.in_channels:
        raise ValueError(f"model expects {model.cfg.in_channels} input channels, got {batch.shape[1]}")
    h, w = batch.shape[2:]
    if h % model.multiple or w % model.multiple:
        raise ValueError(
            f"{model.kind}: spatial size {h}x{w} must be a multiple of {model.multiple} along H and W"
        )
    model.train(training)
    return model(batch)
