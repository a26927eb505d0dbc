"""Bottom-up transformer decoder with per-stage saliency side outputs."""
from __future__ import annotations

from . import tensor as T
from .attention import AttentionConfig, SwinPair
from .errors import ShapeError
from .nn import Conv2d, Linear, Module
from .tensor import Tensor


def to_spatial(tokens: Tensor) -> Tensor:
    """(B, H, W, c) channel-last map -> (B, c, H, W)."""
    return tokens.transpose(0, 3, 1, 2)


def to_tokens(x: Tensor) -> Tensor:
    """(B, c, H, W) -> (B, H, W, c)."""
    return x.transpose(0, 2, 3, 1)


class ConvPair(Module):
    """Two 3x3 conv + ReLU layers; stands in for the two transformer blocks."""

    def __init__(self, rng, dim: int):
        self.convs = [Conv2d(rng, dim, dim), Conv2d(rng, dim, dim)]

    def forward(self, x: Tensor, grid) -> Tensor:
        B, N, c = x.shape
        h = to_spatial(x.reshape(B, *grid, c))
        for conv in self.convs:
            h = T.relu(conv(h))
        return to_tokens(h).reshape(B, N, c)


class DecoderStage(Module):
    """One decoding stage: merge with the coarser stage, two blocks, a saliency head."""

    def __init__(self, rng, cfg: AttentionConfig, prev_dim: int | None = None, mode: str = "transformer",
                 shift_second: bool = True):
        dim = cfg.embed_dim
        self.proj = Linear(rng, dim + prev_dim, dim, std=None) if prev_dim else None
        self.blocks = SwinPair(rng, cfg, shift_second) if mode == "transformer" else ConvPair(rng, dim)
        self.head = Linear(rng, dim, 1)

    def forward(self, f_rd: Tensor, f_prev: Tensor | None = None) -> Tensor:
        """``f_rd`` is (B, H, W, c); ``f_prev`` the (B, H/2, W/2, c') output of the coarser stage."""
        B, H, W, c = f_rd.shape
        x = f_rd
        if (f_prev is None) != (self.proj is None):
            raise ShapeError("the deepest stage takes no previous features; every other stage needs them")
        if f_prev is not None:
            up = T.upsample_nearest(f_prev, 2, axes=(1, 2))
            if up.shape[1:3] != (H, W):
                raise ShapeError(f"upsampled previous stage {up.shape[1:3]} does not match grid {(H, W)}")
            x = self.proj(T.concat([x, up], axis=-1))
        x = self.blocks(x.reshape(B, H * W, c), (H, W))
        return x.reshape(B, H, W, c)

    def side_output(self, f_dec: Tensor) -> Tensor:
        """Per-token linear to one channel + sigmoid, as a (B, H, W) map."""
        return T.sigmoid(self.head(f_dec)).reshape(f_dec.shape[:3])


def decode_stage(f_rd: Tensor, f_prev: Tensor | None, stage: DecoderStage) -> Tensor:
    return stage(f_rd, f_prev)


def side_output(f_dec: Tensor, stage: DecoderStage) -> Tensor:
    return stage.side_output(f_dec)
