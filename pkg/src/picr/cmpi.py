"""Cross-modality point-aware interaction.

At every location the RGB and depth feature vectors are stacked with two
global guidance vectors (saliency-weighted averages of each modality) and
mixed by two rounds of masked multi-head attention that only ever look at
that location's group. Cost is linear in the number of locations.

Group row layout for window ``k`` (``n = k*k``)::

    [0, n)        RGB locals   (row 0 is the location itself)
    [n, 2n)       depth locals (row n is the location itself)
    2n            RGB guidance g_r
    2n + 1        depth guidance g_d
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import MultiHeadAttention
from .errors import ConfigError, ShapeError
from .nn import MLP, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor

INTERACTIONS = ("cmpi", "add", "mul", "concat", "cross_attention", "conv1x1")

MAP_EPS = 1e-6


def masked_average_pool(f: Tensor, s: Tensor | None) -> Tensor:
    """Saliency-weighted spatial mean of ``f`` (B, H, W, c) under ``s`` (B, H, W).

    ``s=None`` means a uniform mask, i.e. the plain spatial mean.
    """
    if s is None:
        return T.mean(f, axis=(1, 2))
    if f.shape[:3] != s.shape:
        raise ShapeError(f"guidance mask {s.shape} does not match feature grid {f.shape[:3]}")
    B, H, W, c = f.shape
    num = T.sum(f * s.reshape(B, H, W, 1), axis=(1, 2))
    den = T.sum(s, axis=(1, 2)).reshape(B, 1) + MAP_EPS
    return num / den


def build_masks(k: int, mask_value: float = -100.0, guidance: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Additive masks for the two attention steps over a window-``k`` group.

    First step blocks RGB locals <-> depth guidance and depth locals <-> RGB
    guidance. Second step blocks every cross-modality pair.
    """
    if k not in (1, 3, 5):
        raise ConfigError(f"interaction window must be 1, 3 or 5, got {k}")
    n = k * k
    modality = np.array([0] * n + [1] * n + ([0, 1] if guidance else []))
    is_global = np.array([False] * (2 * n) + ([True, True] if guidance else []))
    local_r = (modality == 0) & ~is_global
    local_d = (modality == 1) & ~is_global
    g_r = (modality == 0) & is_global
    g_d = (modality == 1) & is_global
    pair = lambda a, b: np.outer(a, b) | np.outer(b, a)  # noqa: E731
    m1 = np.where(pair(local_r, g_d) | pair(local_d, g_r), mask_value, 0.0)
    m2 = np.where(modality[:, None] != modality[None, :], mask_value, 0.0)
    return m1, m2


def gather_locals(f: Tensor, k: int) -> Tensor:
    """(B, H, W, c) -> (B, H, W, k*k, c); centre first, then the rest in raster order, zeros off-grid."""
    B, H, W, c = f.shape
    if k == 1:
        return f.reshape(B, H, W, 1, c)
    r = k // 2
    fp = T.pad(f, ((0, 0), (r, r), (r, r), (0, 0)))
    offsets = [(0, 0)] + [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dy, dx) != (0, 0)]
    rows = [fp[:, r + dy:r + dy + H, r + dx:r + dx + W, :].reshape(B, H, W, 1, c) for dy, dx in offsets]
    return T.concat(rows, axis=3)


def build_group(f_r: Tensor, f_d: Tensor, g_r: Tensor | None, g_d: Tensor | None, k: int = 1) -> Tensor:
    """Stack locals and (optionally) the broadcast guidance vectors into (B, H, W, L, c)."""
    B, H, W, c = f_r.shape
    parts = [gather_locals(f_r, k), gather_locals(f_d, k)]
    if g_r is not None:
        for g in (g_r, g_d):
            parts.append(T.expand(g.reshape(B, 1, 1, 1, c), (B, H, W, 1, c)))
    return T.concat(parts, axis=3)


class RelationModeling(Module):
    """Two-step masked attention over a point group with per-head projections."""

    def __init__(self, rng, dim: int, heads: int, share_steps: bool = False,
                 prenorm: bool = True, residual: bool = True):
        if dim % heads:
            raise ConfigError(f"width {dim} is not divisible by {heads} heads")
        d = dim // heads
        self.norm = LayerNorm(dim) if prenorm else None
        self.step1 = self._projections(rng, heads, d)
        self.step2 = None if share_steps else self._projections(rng, heads, d)
        self.out = Linear(rng, dim, dim)
        self.heads = heads
        self.residual = residual

    @staticmethod
    def _projections(rng, n, d):
        return [Parameter(trunc_normal(rng, (n, d, d))) for _ in range(3)] + \
               [Parameter(np.zeros((n, 1, d))) for _ in range(3)]

    def _attend(self, x: Tensor, proj, mask, return_weights=False):
        wq, wk, wv, bq, bk, bv = proj
        q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
        d = x.shape[-1]
        nd = k.ndim
        scores = (q @ k.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2))) * (1.0 / np.sqrt(d))
        if mask is not None:
            scores = scores + mask.astype(x.dtype)
        w = T.softmax(scores, axis=-1)
        out = w @ v
        return (out, w) if return_weights else out

    def forward(self, group: Tensor, m1=None, m2=None, two_step: bool = True, return_weights: bool = False):
        """``group`` is (..., L, c); returns the mixed group of the same shape."""
        *lead, L, c = group.shape
        n = self.heads
        x = self.norm(group) if self.norm is not None else group
        nl = len(lead)
        # (..., L, c) -> (..., n, L, d)
        xh = x.reshape(*lead, L, n, c // n).transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2))
        h, w1 = self._attend(xh, self.step1, m1, return_weights=True)
        w2 = None
        if two_step:
            h, w2 = self._attend(h, self.step2 or self.step1, m2, return_weights=True)
        h = h.transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2)).reshape(*lead, L, c)
        out = self.out(h)
        if self.residual:
            out = out + group
        return (out, (w1, w2)) if return_weights else out


class Fuse(Module):
    """Linear(concat(MLP_r(a), MLP_d(b))) back to width ``dim``.

    Fan-in scaled init: the output starts a fresh feature stream for the
    decoder, and 0.02-std weights would shrink it by ~5x per layer.
    """

    def __init__(self, rng, dim: int):
        self.mlp_r = MLP(rng, dim, 2 * dim, std=None)
        self.mlp_d = MLP(rng, dim, 2 * dim, std=None)
        self.proj = Linear(rng, 2 * dim, dim, std=None)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"fuse inputs differ: {a.shape} vs {b.shape}")
        return self.proj(T.concat([self.mlp_r(a), self.mlp_d(b)], axis=-1))


def relation_modeling(group: Tensor, rm: RelationModeling, m1, m2, two_step: bool = True,
                      k: int = 1) -> tuple[Tensor, Tensor]:
    """Mix a group and return the refined (RGB, depth) vectors of the location itself."""
    out = rm(group, m1, m2, two_step)
    n = k * k
    return out[..., 0, :], out[..., n, :]


def fuse(a: Tensor, b: Tensor, params: Fuse) -> Tensor:
    return params(a, b)


class CmPI(Module):
    """Cross-modality interaction block for one decoder stage.

    ``interaction`` selects the full point-aware scheme or one of the
    replacement baselines (add, mul, concat, cross_attention, conv1x1).
    """

    def __init__(self, rng, dim: int, heads: int, interaction: str = "cmpi", window: int = 1,
                 mask_value: float = -100.0, rm_enabled: bool = True, single_step: bool = False,
                 use_m1: bool = True, use_m2: bool = True, use_guidance: bool = True,
                 share_steps: bool = False, prenorm: bool = True, residual: bool = True):
        if interaction not in INTERACTIONS:
            raise ConfigError(f"unknown interaction {interaction!r}; expected one of {INTERACTIONS}")
        if dim % heads:
            raise ConfigError(f"width {dim} is not divisible by {heads} heads")
        self.interaction = interaction
        self.window = window
        self.rm_enabled = rm_enabled
        self.single_step = single_step
        self.use_guidance = use_guidance
        self.m1 = self.m2 = None
        if interaction == "cmpi":
            m1, m2 = build_masks(window, mask_value, guidance=use_guidance)
            self.m1 = m1 if use_m1 else None
            self.m2 = m2 if use_m2 else None
            if rm_enabled:
                self.rm = RelationModeling(rng, dim, heads, share_steps or single_step, prenorm, residual)
            self.fuse = Fuse(rng, dim)
        elif interaction == "concat":
            self.proj = Linear(rng, 2 * dim, dim, std=None)
        elif interaction == "conv1x1":
            self.proj = Linear(rng, 4 * dim, dim, std=None)
        elif interaction == "cross_attention":
            self.norm_r = LayerNorm(dim)
            self.norm_d = LayerNorm(dim)
            self.attn_r = MultiHeadAttention(rng, dim, heads)
            self.attn_d = MultiHeadAttention(rng, dim, heads)
            self.fuse = Fuse(rng, dim)

    def guidance(self, f_r: Tensor, f_d: Tensor, s_up: Tensor | None):
        return masked_average_pool(f_r, s_up), masked_average_pool(f_d, s_up)

    def forward(self, f_r: Tensor, f_d: Tensor, s_up: Tensor | None = None) -> Tensor:
        """``f_r``/``f_d`` are (B, H, W, c); ``s_up`` is the (B, H, W) upsampled coarser saliency map."""
        if f_r.shape != f_d.shape:
            raise ShapeError(f"modalities disagree: rgb {f_r.shape}, depth {f_d.shape}")
        mode = self.interaction
        if mode == "add":
            return f_r + f_d
        if mode == "mul":
            return f_r * f_d
        if mode == "concat":
            return self.proj(T.concat([f_r, f_d], axis=-1))
        if mode == "conv1x1":
            B, H, W, c = f_r.shape
            g_r, g_d = self.guidance(f_r, f_d, s_up)
            g = [T.expand(v.reshape(B, 1, 1, c), (B, H, W, c)) for v in (g_r, g_d)]
            return self.proj(T.concat([f_r, f_d] + g, axis=-1))
        if mode == "cross_attention":
            B, H, W, c = f_r.shape
            tr, td = f_r.reshape(B, H * W, c), f_d.reshape(B, H * W, c)
            nr, nd = self.norm_r(tr), self.norm_d(td)
            br = tr + self.attn_r(nr, context=nd)
            bd = td + self.attn_d(nd, context=nr)
            return self.fuse(br, bd).reshape(B, H, W, c)
        return self._point_aware(f_r, f_d, s_up)

    def _point_aware(self, f_r, f_d, s_up):
        if not self.rm_enabled:
            return self.fuse(f_r, f_d)
        g_r = g_d = None
        if self.use_guidance:
            g_r, g_d = self.guidance(f_r, f_d, s_up)
        group = build_group(f_r, f_d, g_r, g_d, self.window)
        bar_r, bar_d = relation_modeling(group, self.rm, self.m1, self.m2,
                                         two_step=not self.single_step, k=self.window)
        return self.fuse(bar_r, bar_d)


def cmpi_forward(f_r: Tensor, f_d: Tensor, s_next: Tensor | None, module: CmPI) -> Tensor:
    return module(f_r, f_d, s_next)
