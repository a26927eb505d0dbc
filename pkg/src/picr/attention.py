"""Masked multi-head attention and the (shifted) window transformer block."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import MLP, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor

MASK_VALUES = (-10.0, -100.0, -1000.0, -10000.0)


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int
    num_heads: int = 1
    window: int = 1
    mask_value: float = -100.0
    act: str = "relu"
    rel_pos_bias: bool = False

    def __post_init__(self):
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.window < 1:
            raise ConfigError(f"window must be positive, got {self.window}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


def _split_heads(x: Tensor, n: int) -> Tensor:
    # (..., L, c) -> (..., n, L, d)
    *lead, L, c = x.shape
    x = x.reshape(*lead, L, n, c // n)
    k = len(lead)
    return x.transpose(tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, n, L, d = x.shape
    k = len(lead)
    x = x.transpose(tuple(range(k)) + (k + 1, k, k + 2))
    return x.reshape(*lead, L, n * d)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, num_heads: int = 1,
                     out_proj: Linear | None = None, return_weights: bool = False):
    """softmax(Q Kᵀ/√d + M) V per head, heads concatenated, optional output projection.

    ``q`` is (..., Lq, c); ``k``/``v`` are (..., Lk, c). ``mask`` is an additive
    array broadcastable to (..., heads, Lq, Lk); a 2-D mask must be (Lq, Lk).
    """
    Lq, c = q.shape[-2:]
    Lk = k.shape[-2]
    if k.shape[-1] != c or v.shape[-1] != c or v.shape[-2] != Lk:
        raise ShapeError(f"attention operands disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    if c % num_heads:
        raise ConfigError(f"width {c} is not divisible by {num_heads} heads")
    if mask is not None:
        if mask.ndim == 2 and mask.shape != (Lq, Lk):
            raise ShapeError(f"mask of shape {mask.shape} does not match attention size ({Lq}, {Lk})")
        if not isinstance(mask, Tensor):
            mask = np.asarray(mask).astype(q.dtype, copy=False)
    d = c // num_heads
    qh, kh, vh = (_split_heads(t, num_heads) for t in (q, k, v))
    nd = kh.ndim
    scores = T.matmul(qh, kh.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2)))
    scores = scores * (1.0 / math.sqrt(d))
    if mask is not None:
        scores = scores + mask
    weights = T.softmax(scores, axis=-1)
    out = _merge_heads(T.matmul(weights, vh))
    if out_proj is not None:
        out = out_proj(out)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Standard projected attention; ``context`` switches it to cross-attention."""

    def __init__(self, rng, dim: int, heads: int):
        if dim % heads:
            raise ConfigError(f"width {dim} is not divisible by {heads} heads")
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.proj = Linear(rng, dim, dim)
        self.heads = heads

    def forward(self, x: Tensor, context: Tensor | None = None, mask=None) -> Tensor:
        ctx = x if context is None else context
        return masked_attention(self.q(x), self.k(ctx), self.v(ctx), mask, self.heads, self.proj)


def _relative_index(w: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    return rel[0] * (2 * w - 1) + rel[1]


def window_partition(x: Tensor, w: int) -> Tensor:
    """(B, H, W, c) -> (B, nWin, w*w, c) with windows in raster order."""
    B, H, W, c = x.shape
    x = x.reshape(B, H // w, w, W // w, w, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, (H // w) * (W // w), w * w, c)


def window_merge(x: Tensor, w: int, H: int, W: int) -> Tensor:
    B, _, _, c = x.shape
    x = x.reshape(B, H // w, W // w, w, w, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, c)


class SwinBlock(Module):
    """Pre-norm window attention + residual, then pre-norm MLP + residual.

    Grids that do not divide by the window are zero-padded; padded keys are
    masked. With ``shift`` the grid is rolled by ``window // 2`` first and the
    usual region mask keeps wrapped-around tokens apart. A grid that fits in a
    single window is never shifted.
    """

    def __init__(self, rng, cfg: AttentionConfig, shift: bool = False, mlp_ratio: int = 4):
        self.norm1 = LayerNorm(cfg.embed_dim)
        self.qkv = Linear(rng, cfg.embed_dim, 3 * cfg.embed_dim)
        self.proj = Linear(rng, cfg.embed_dim, cfg.embed_dim)
        if cfg.rel_pos_bias:
            self.rel_bias = Parameter(trunc_normal(rng, ((2 * cfg.window - 1) ** 2, cfg.num_heads)))
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.mlp = MLP(rng, cfg.embed_dim, mlp_ratio * cfg.embed_dim, act=cfg.act)
        self.cfg = cfg
        self.shift = shift
        self._mask_cache: dict = {}

    def shift_size(self, Hp: int, Wp: int) -> int:
        w = self.cfg.window
        return w // 2 if self.shift and (Hp > w or Wp > w) else 0

    def attention_mask(self, H: int, W: int):
        """Additive mask of shape (nWin, 1, L, L), or None when nothing is masked."""
        key = (H, W)
        if key in self._mask_cache:
            return self._mask_cache[key]
        w = self.cfg.window
        Hp, Wp = -(-H // w) * w, -(-W // w) * w
        s = self.shift_size(Hp, Wp)
        if s == 0 and Hp == H and Wp == W:
            self._mask_cache[key] = None
            return None
        valid = np.zeros((Hp, Wp), dtype=bool)
        valid[:H, :W] = True
        region = np.zeros((Hp, Wp), dtype=np.int64)
        if s:
            cnt = 0
            for hs in (slice(0, -w), slice(-w, -s), slice(-s, None)):
                for ws in (slice(0, -w), slice(-w, -s), slice(-s, None)):
                    region[hs, ws] = cnt
                    cnt += 1
            valid = np.roll(valid, (-s, -s), axis=(0, 1))

        def part(a):
            return a.reshape(Hp // w, w, Wp // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)

        reg, val = part(region), part(valid)
        blocked = (reg[:, :, None] != reg[:, None, :]) | ~val[:, None, :]
        mask = np.where(blocked, self.cfg.mask_value, 0.0)[:, None]
        self._mask_cache[key] = mask
        return mask

    def forward(self, x: Tensor, grid: tuple[int, int]) -> Tensor:
        B, N, c = x.shape
        H, W = grid
        if N != H * W:
            raise ShapeError(f"swin block got {N} tokens for a {H}x{W} grid")
        w = self.cfg.window
        Hp, Wp = -(-H // w) * w, -(-W // w) * w
        s = self.shift_size(Hp, Wp)
        h = self.norm1(x).reshape(B, H, W, c)
        if Hp != H or Wp != W:
            h = T.pad(h, ((0, 0), (0, Hp - H), (0, Wp - W), (0, 0)))
        if s:
            h = T.roll(h, (-s, -s), axis=(1, 2))
        win = window_partition(h, w)
        qkv = self.qkv(win)
        q, k, v = qkv[..., :c], qkv[..., c:2 * c], qkv[..., 2 * c:]
        mask = self.attention_mask(H, W)
        if self.cfg.rel_pos_bias:
            idx = _relative_index(w).reshape(-1)
            bias = self.rel_bias[idx].reshape(w * w, w * w, -1).transpose(2, 0, 1)
            mask = bias if mask is None else bias + mask
        h = masked_attention(q, k, v, mask, self.cfg.num_heads, self.proj)
        h = window_merge(h, w, Hp, Wp)
        if s:
            h = T.roll(h, (s, s), axis=(1, 2))
        if Hp != H or Wp != W:
            h = h[:, :H, :W, :]
        x = x + h.reshape(B, N, c)
        return x + self.mlp(self.norm2(x))


class SwinPair(Module):
    """A regular block followed by a shifted one."""

    def __init__(self, rng, cfg: AttentionConfig, shift_second: bool = True):
        self.blocks = [SwinBlock(rng, cfg, shift=False), SwinBlock(rng, cfg, shift=shift_second)]

    def forward(self, x: Tensor, grid) -> Tensor:
        for blk in self.blocks:
            x = blk(x, grid)
        return x
