"""Full network: shared encoder -> per-stage interaction + decoding (deep to fine) -> refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig
from .cmpi import CmPI
from .cnnr import CNNR
from .config import Config
from .decoder import DecoderStage
from .encoder import Encoder, FeaturePyramid, preprocess_depth
from .errors import ShapeError
from .nn import Module
from .tensor import Tensor


@dataclass
class Prediction:
    sides: list[Tensor]   # [S_1 .. S_4], S_i of shape (B, H/2**(i+1), W/2**(i+1))
    out: Tensor           # (B, H, W)
    decoded: list[Tensor]  # [f_dec^1 .. f_dec^4], channel-last


class PICRNet(Module):
    def __init__(self, cfg: Config):
        cfg.validate()
        self.cfg = cfg
        m, a = cfg.model, cfg.ablation
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(rng, m.embed_dim, tuple(m.heads), m.window, m.mask_value, m.mlp_act, m.rel_pos_bias)
        dims = [m.embed_dim * 2 ** i for i in range(4)]
        self.cmpi = [
            CmPI(rng, dims[i], m.cmpi_heads[i], a.interaction, m.cmpi_window, m.mask_value,
                 a.rm_enabled, a.single_step, a.use_m1, a.use_m2, a.use_guidance,
                 a.rm_share_step_weights, m.rm_prenorm, m.rm_residual)
            for i in range(4)
        ]
        self.decoder = [
            DecoderStage(rng, AttentionConfig(dims[i], m.heads[i], m.window, m.mask_value, m.mlp_act, m.rel_pos_bias),
                         dims[i + 1] if i < 3 else None, a.decoder, m.decoder_shift)
            for i in range(4)
        ]
        if a.cnnr_enabled:
            self.cnnr = CNNR(rng, dims[0], m.cnnr_width, tuple(m.vgg_widths), m.ca_reduction, m.cnnr_upsample)

    def trainable_parameters(self):
        frozen = set()
        if self.cfg.ablation.cnnr_enabled and self.cfg.ablation.cnnr_freeze:
            frozen = {id(p) for p in self.cnnr.vgg_parameters()}
        return [(n, p) for n, p in self.named_parameters() if id(p) not in frozen]

    def forward(self, rgb, depth) -> Prediction:
        """``rgb`` (B, 3, H, W) in [0, 1]; ``depth`` raw (B, 1, H, W)."""
        rgb = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb))
        dtype = self.encoder.patch_embed.proj.weight.dtype
        rgb = Tensor(rgb.data.astype(dtype)) if rgb.dtype != dtype and not rgb.requires_grad else rgb
        if rgb.ndim == 3:
            rgb = rgb.reshape(1, *rgb.shape)
        depth = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
        if depth.ndim == 3:
            depth = depth[None]
        B, _, H, W = rgb.shape
        size = self.cfg.model.input_size
        if (H, W) != (size, size):
            raise ShapeError(f"model expects {size}x{size} inputs, got {H}x{W}")
        depth3 = Tensor(preprocess_depth(depth.astype(dtype)).data.astype(dtype))
        pyr_r, pyr_d = self.encoder.encode_pair(rgb, depth3)
        return self.decode(pyr_r, pyr_d, rgb)

    def decode(self, pyr_r: FeaturePyramid, pyr_d: FeaturePyramid, rgb: Tensor) -> Prediction:
        sides: list[Tensor | None] = [None] * 4
        decoded: list[Tensor | None] = [None] * 4
        f_prev = s_next = None
        for i in range(3, -1, -1):
            s_up = T.upsample_nearest(s_next, 2, axes=(1, 2)) if s_next is not None else None
            f_rd = self.cmpi[i](pyr_r[i], pyr_d[i], s_up)
            f_dec = self.decoder[i](f_rd, f_prev)
            s_next = self.decoder[i].side_output(f_dec)
            sides[i], decoded[i], f_prev = s_next, f_dec, f_dec
        if self.cfg.ablation.cnnr_enabled:
            out = self.cnnr(decoded[0], rgb, freeze_vgg=self.cfg.ablation.cnnr_freeze)
        else:
            out = T.upsample_nearest(sides[0], 4, axes=(1, 2))
        return Prediction(sides, out, decoded)


def build_model(cfg: Config) -> PICRNet:
    return PICRNet(cfg)
