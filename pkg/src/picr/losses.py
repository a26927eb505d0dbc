"""Mixed BCE + SSIM + IoU supervision with down-weighted side outputs.

Maps are (..., H, W); every loss averages over all leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .tensor import Tensor, bilinear_matrix

BCE_CLAMP = 1e-7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_SIGMA = 1.5
IOU_EPS = 1.0


def _pair(s: Tensor, g) -> tuple[Tensor, Tensor]:
    g = g if isinstance(g, Tensor) else Tensor(np.asarray(g, dtype=s.dtype))
    if s.shape != g.shape:
        raise ShapeError(f"prediction {s.shape} and target {g.shape} differ in shape")
    return s, g


def bce_loss(s: Tensor, g) -> Tensor:
    s, g = _pair(s, g)
    s = T.clip(s, BCE_CLAMP, 1 - BCE_CLAMP)
    ll = g * T.log(s) + (1 - g) * T.log(1 - s)
    return -T.mean(ll)


def ssim_window(h: int, w: int) -> int:
    """Largest odd window not above 11 that fits in the map."""
    m = min(11, min(h, w))
    return m if m % 2 else m - 1


@lru_cache(maxsize=64)
def gaussian_filter_matrix(n: int, size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """(n, n) matrix applying a normalised 1-D Gaussian with reflection padding."""
    r = size // 2
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    taps /= taps.sum()
    m = np.zeros((n, n))
    for i in range(n):
        for t, wt in zip(range(-r, r + 1), taps):
            j = i + t
            if j < 0:
                j = -j
            elif j >= n:
                j = 2 * (n - 1) - j
            m[i, j] += wt
    return m


def ssim_map(s: Tensor, g: Tensor, window: int | None = None) -> Tensor:
    H, W = s.shape[-2:]
    w = window or ssim_window(H, W)
    ah = Tensor(gaussian_filter_matrix(H, w).astype(s.dtype))
    aw = Tensor(gaussian_filter_matrix(W, w).T.astype(s.dtype))

    def blur(x):
        return (ah @ x) @ aw

    mu_s, mu_g = blur(s), blur(g)
    ss = blur(s * s) - mu_s * mu_s
    gg = blur(g * g) - mu_g * mu_g
    sg = blur(s * g) - mu_s * mu_g
    num = (2 * mu_s * mu_g + SSIM_C1) * (2 * sg + SSIM_C2)
    den = (mu_s * mu_s + mu_g * mu_g + SSIM_C1) * (ss + gg + SSIM_C2)
    return num / den


def ssim_loss(s: Tensor, g, window: int | None = None) -> Tensor:
    """1 - mean local SSIM (Gaussian window, sigma 1.5, reflection padding).

    Maps below 3x3 are rejected unless an explicit ``window`` is given.
    """
    s, g = _pair(s, g)
    H, W = s.shape[-2:]
    if window is None and min(H, W) < 3:
        raise DomainError(f"ssim needs maps of at least 3x3, got {H}x{W}")
    if window is not None and (window % 2 == 0 or window > min(H, W)):
        raise DomainError(f"ssim window {window} must be odd and fit in {H}x{W}")
    return 1 - T.mean(ssim_map(s, g, window))


def iou_loss(s: Tensor, g) -> Tensor:
    """Soft IoU, ``1 - (I + 1) / (U + 1)`` per map, averaged."""
    s, g = _pair(s, g)
    inter = T.sum(s * g, axis=(-2, -1))
    union = T.sum(s, axis=(-2, -1)) + T.sum(g, axis=(-2, -1)) - inter
    return T.mean(1 - (inter + IOU_EPS) / (union + IOU_EPS))


def base_loss(s: Tensor, g) -> tuple[Tensor, dict[str, float]]:
    """BCE + SSIM + IoU. Maps smaller than 3x3 use a 1x1 SSIM window."""
    H, W = s.shape[-2:]
    window = 1 if min(H, W) < 3 else None
    parts = {"bce": bce_loss(s, g), "ssim": ssim_loss(s, g, window), "iou": iou_loss(s, g)}
    total = parts["bce"] + parts["ssim"] + parts["iou"]
    return total, {k: v.item() for k, v in parts.items()}


def downsample_target(g: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear (area-aware) resize of (..., H, W) targets, clamped to [0, 1]."""
    g = np.asarray(g)
    H, W = g.shape[-2:]
    if (H, W) == tuple(size):
        return g
    ry = bilinear_matrix(H, size[0])
    rx = bilinear_matrix(W, size[1])
    return np.clip(ry @ g.astype(np.float64) @ rx.T, 0.0, 1.0).astype(g.dtype if g.dtype.kind == "f" else np.float32)


SIDE_WEIGHTS = (0.5, 0.25, 0.125, 0.0625)


@dataclass
class LossReport:
    """Total loss plus its components.

    ``per_side[i]`` is the already-weighted base loss of stage ``i + 1``;
    ``total == sum(per_side) + bce + ssim + iou``.
    """

    total: Tensor
    bce: float
    ssim: float
    iou: float
    per_side: list[float] = field(default_factory=list)
    side_terms: list[dict] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.total.item()

    def recomposed(self) -> float:
        return float(sum(self.per_side) + self.bce + self.ssim + self.iou)

    def row(self) -> list[float]:
        return [self.value, self.bce, self.ssim, self.iou, *self.per_side]


def total_loss(sides, s_out: Tensor, g) -> LossReport:
    """``sides`` is ``[S_1, S_2, S_3, S_4]`` (finest first); ``g`` the full-resolution target.

    Side ``i`` is compared with ``g`` resized to its grid and weighted by 1/2**i.
    """
    g = np.asarray(g.data if isinstance(g, Tensor) else g)
    if len(sides) != 4:
        raise ShapeError(f"expected four side outputs, got {len(sides)}")
    out_loss, out_parts = base_loss(s_out, g.astype(s_out.dtype))
    total = out_loss
    per_side, side_terms = [], []
    for wt, s in zip(SIDE_WEIGHTS, sides):
        gi = downsample_target(g, s.shape[-2:]).astype(s.dtype)
        li, parts = base_loss(s, gi)
        total = total + wt * li
        per_side.append(wt * li.item())
        side_terms.append(parts)
    return LossReport(total, out_parts["bce"], out_parts["ssim"], out_parts["iou"], per_side, side_terms)
