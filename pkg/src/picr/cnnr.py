"""CNN-induced refinement: shallow VGG-style features restore full-resolution detail."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Linear, Module
from .tensor import Tensor


@dataclass
class VggLiteFeatures:
    full: Tensor  # (B, 64, H, W)
    half: Tensor  # (B, 128, H/2, W/2)


class VggLite(Module):
    """First two VGG16 stages: 2x(conv3x3+ReLU), maxpool, 2x(conv3x3+ReLU)."""

    def __init__(self, rng, widths=(64, 128)):
        w1, w2 = widths
        self.stage1 = [Conv2d(rng, 3, w1), Conv2d(rng, w1, w1)]
        self.stage2 = [Conv2d(rng, w1, w2), Conv2d(rng, w2, w2)]

    def forward(self, rgb: Tensor) -> VggLiteFeatures:
        H, W = rgb.shape[-2:]
        if H % 2 or W % 2:
            raise ShapeError(f"vgg_lite needs even spatial dims, got {H}x{W}")
        x = rgb
        for conv in self.stage1:
            x = T.relu(conv(x))
        full = x
        x = T.maxpool2x(x)
        for conv in self.stage2:
            x = T.relu(conv(x))
        return VggLiteFeatures(full, x)


class ChannelAttention(Module):
    """Squeeze-excitation gate with a residual: ``x + x * sigmoid(MLP(avgpool(x)))``."""

    def __init__(self, rng, channels: int, reduction: int = 4):
        if channels % reduction:
            raise ConfigError(f"{channels} channels not divisible by reduction {reduction}")
        self.fc1 = Linear(rng, channels, channels // reduction, std=np.sqrt(2.0 / channels))
        self.fc2 = Linear(rng, channels // reduction, channels, std=np.sqrt(1.0 / (channels // reduction)))

    def scale(self, x: Tensor) -> Tensor:
        """Per-channel gate in (0, 1), shape (B, C, 1, 1)."""
        B, C = x.shape[:2]
        s = T.avgpool_global(x).reshape(B, C)
        s = T.sigmoid(self.fc2(T.relu(self.fc1(s))))
        return s.reshape(B, C, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        return x + x * self.scale(x)


class BaseConv(Module):
    """3x3 convolution followed by ReLU."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.conv = Conv2d(rng, c_in, c_out)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.conv(x))


def _up(x: Tensor, mode: str) -> Tensor:
    if mode == "bilinear":
        H, W = x.shape[-2:]
        return T.resize_bilinear(x, (2 * H, 2 * W))
    return T.upsample2x_nearest(x)


class CNNR(Module):
    """Refinement unit from decoder stage-1 tokens to the full-resolution saliency map."""

    def __init__(self, rng, in_dim: int, width: int = 64, vgg_widths=(64, 128), reduction: int = 4,
                 upsample: str = "nearest"):
        v_full, v_half = vgg_widths
        self.vgg = VggLite(rng, vgg_widths)
        self.base_in = BaseConv(rng, in_dim, width)
        self.ca_half = ChannelAttention(rng, width + v_half, reduction)
        self.base_half = BaseConv(rng, width + v_half, width)
        self.ca_full = ChannelAttention(rng, width + v_full, reduction)
        self.base_full = BaseConv(rng, width + v_full, width)
        self.pred = Conv2d(rng, width, 1)
        self.upsample = upsample

    def refine(self, f_dec1: Tensor, feats: VggLiteFeatures) -> Tensor:
        """``f_dec1`` is (B, H/4, W/4, c); returns the (B, H, W) map in (0, 1)."""
        x = f_dec1.transpose(0, 3, 1, 2)
        t_half = _up(self.base_in(x), self.upsample)
        if t_half.shape[-2:] != feats.half.shape[-2:]:
            raise ShapeError(f"decoder grid {t_half.shape[-2:]} does not match half-res features {feats.half.shape[-2:]}")
        t = self.base_half(self.ca_half(T.concat([t_half, feats.half], axis=1)))
        t_full = _up(t, self.upsample)
        if t_full.shape[-2:] != feats.full.shape[-2:]:
            raise ShapeError(f"refined grid {t_full.shape[-2:]} does not match full-res features {feats.full.shape[-2:]}")
        t = self.base_full(self.ca_full(T.concat([t_full, feats.full], axis=1)))
        s = T.sigmoid(self.pred(t))
        return s.reshape(s.shape[0], *s.shape[2:])

    def forward(self, f_dec1: Tensor, rgb: Tensor, freeze_vgg: bool = False) -> Tensor:
        if freeze_vgg:
            with T.no_grad():
                feats = self.vgg(rgb)
        else:
            feats = self.vgg(rgb)
        return self.refine(f_dec1, feats)

    def vgg_parameters(self):
        return self.vgg.parameters()


def channel_attention(x: Tensor, params: ChannelAttention) -> Tensor:
    return params(x)


def vgg_lite(rgb: Tensor, params: VggLite) -> VggLiteFeatures:
    return params(rgb)
