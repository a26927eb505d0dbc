"""Shared-weight hierarchical window-attention encoder for the RGB and depth streams."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, SwinPair
from .errors import ShapeError
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor


def preprocess_depth(depth) -> Tensor:
    """Min-max normalise each depth map to [0, 1] and copy it into three channels.

    Accepts (1, H, W) or (B, 1, H, W). A constant map becomes 0.5 everywhere.
    """
    d = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
    batched = d.ndim == 4
    if not batched:
        d = d[None]
    if d.ndim != 4 or d.shape[1] != 1:
        raise ShapeError(f"depth must be (1,H,W) or (B,1,H,W), got {d.shape}")
    dtype = d.dtype if d.dtype in (np.float32, np.float64) else np.float32
    d = d.astype(dtype)
    lo = d.min(axis=(1, 2, 3), keepdims=True)
    hi = d.max(axis=(1, 2, 3), keepdims=True)
    rng = hi - lo
    norm = np.where(rng > 0, (d - lo) / np.where(rng > 0, rng, 1), 0.5).astype(dtype)
    out = np.repeat(norm, 3, axis=1)
    return Tensor(out if batched else out[0])


@dataclass
class FeaturePyramid:
    """Four channel-last maps, level 1 (finest, stride 4) to level 4 (stride 32)."""

    levels: list[Tensor]

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def grids(self) -> list[tuple[int, int]]:
        return [tuple(f.shape[1:3]) for f in self.levels]

    @property
    def channels(self) -> list[int]:
        return [f.shape[-1] for f in self.levels]


class PatchEmbed(Module):
    """Non-overlapping 4x4 patches projected to ``dim`` (a stride-4 4x4 conv), then LayerNorm."""

    def __init__(self, rng, in_ch: int, dim: int, patch: int = 4):
        self.proj = Linear(rng, in_ch * patch * patch, dim)
        self.norm = LayerNorm(dim)
        self.patch = patch

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        p = self.patch
        x = x.reshape(B, C, H // p, p, W // p, p).transpose(0, 2, 4, 1, 3, 5)
        x = x.reshape(B, H // p, W // p, C * p * p)
        return self.norm(self.proj(x))


class PatchMerging(Module):
    """Concatenate each 2x2 neighbourhood (4c) and project to 2c."""

    def __init__(self, rng, dim: int):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(rng, 4 * dim, 2 * dim, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        B, H, W, c = x.shape
        if H % 2 or W % 2:
            raise ShapeError(f"patch merging needs an even grid, got {H}x{W}")
        x = x.reshape(B, H // 2, 2, W // 2, 2, c).transpose(0, 1, 3, 4, 2, 5)
        x = x.reshape(B, H // 2, W // 2, 4 * c)
        return self.reduction(self.norm(x))


class Encoder(Module):
    """Single parameter set; both modalities run through it."""

    def __init__(self, rng, embed_dim: int, heads: tuple[int, ...], window: int,
                 mask_value: float = -100.0, act: str = "relu", rel_pos_bias: bool = False):
        self.patch_embed = PatchEmbed(rng, 3, embed_dim)
        self.merges = []
        self.stages = []
        for i, n in enumerate(heads):
            dim = embed_dim * 2 ** i
            if i > 0:
                self.merges.append(PatchMerging(rng, dim // 2))
            cfg = AttentionConfig(dim, n, window, mask_value, act, rel_pos_bias)
            self.stages.append(SwinPair(rng, cfg))

    def forward(self, x: Tensor) -> list[Tensor]:
        B, C, H, W = x.shape
        if H % 32 or W % 32:
            raise ShapeError(f"input size {H}x{W} must be a multiple of 32")
        f = self.patch_embed(x)
        levels = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                f = self.merges[i - 1](f)
            b, h, w, c = f.shape
            f = stage(f.reshape(b, h * w, c), (h, w)).reshape(b, h, w, c)
            levels.append(f)
        return levels

    def encode_pair(self, rgb: Tensor, depth3: Tensor) -> tuple[FeaturePyramid, FeaturePyramid]:
        """Run both modalities through the same weights in one batched pass."""
        if rgb.shape != depth3.shape:
            raise ShapeError(f"rgb {rgb.shape} and depth {depth3.shape} differ in shape")
        single = rgb.ndim == 3
        if single:
            rgb, depth3 = rgb.reshape(1, *rgb.shape), depth3.reshape(1, *depth3.shape)
        B = rgb.shape[0]
        levels = self.forward(T.concat([rgb, depth3], axis=0))
        return FeaturePyramid([f[:B] for f in levels]), FeaturePyramid([f[B:] for f in levels])


def encode_pair(rgb: Tensor, depth3: Tensor, encoder: Encoder):
    return encoder.encode_pair(rgb, depth3)
