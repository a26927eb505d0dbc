"""Saliency evaluation: MAE, maximum F-measure and S-measure on float maps in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

BETA2 = 0.3
N_THRESHOLDS = 256
_EPS = np.spacing(1)


def _check(s, g, binary: bool):
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ShapeError(f"prediction {s.shape} and ground truth {g.shape} differ in shape")
    if binary and not np.all((g == 0) | (g == 1)):
        raise DomainError("ground truth must be binary {0, 1}")
    return s, g


def mae(s, g) -> float:
    s, g = _check(s, g, binary=False)
    return float(np.abs(s - g).mean())


def f_measure_curve(s, g) -> np.ndarray:
    """F-measure at thresholds t = k/255, k = 0..255; a pixel counts as salient when s > t."""
    s, g = _check(s, g, binary=True)
    fg = g.astype(bool)
    t = np.arange(N_THRESHOLDS) / 255.0
    s_all = np.sort(s.ravel())
    s_fg = np.sort(s[fg])
    pred = (s_all.size - np.searchsorted(s_all, t, side="right")).astype(np.float64)
    tp = (s_fg.size - np.searchsorted(s_fg, t, side="right")).astype(np.float64)
    n_fg = float(fg.sum())
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = tp / n_fg if n_fg > 0 else np.zeros_like(tp)
    denom = BETA2 * precision + recall
    return np.divide((1 + BETA2) * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def f_measure_max(s, g) -> float:
    return float(f_measure_curve(s, g).max())


def _object_score(x: np.ndarray) -> float:
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return float(2 * mu / (mu * mu + 1 + sigma + _EPS))


def _s_object(s, g) -> float:
    fg_mask = g == 1
    u = g.mean()
    o_fg = _object_score(s[fg_mask]) if fg_mask.any() else 0.0
    o_bg = _object_score(1 - s[~fg_mask]) if (~fg_mask).any() else 0.0
    return float(u * o_fg + (1 - u) * o_bg)


def _split_edges(index_sum: int, count: int) -> tuple[int, ...]:
    """Pixel edges nearest the centroid ``index_sum / count + 1/2`` (edge coordinates).

    Exact integer arithmetic. When the centroid sits on a pixel centre both
    neighbouring edges are returned and the caller averages over them, which
    keeps the region split mirror-symmetric.
    """
    q, r = divmod(2 * index_sum + count, 2 * count)
    if r == count:
        return q, q + 1
    return (q + 1,) if r > count else (q,)


def _region_ssim(s, g) -> float:
    n = s.size
    x, y = s.mean(), g.mean()
    sx = ((s - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((s - x) * (g - y)).sum() / (n - 1 + _EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + _EPS))
    return 1.0 if beta == 0 else 0.0


def _s_region(s, g) -> float:
    h, w = g.shape
    ys, xs = np.nonzero(g)
    splits = [(cx, cy) for cx in _split_edges(int(xs.sum()), xs.size) for cy in _split_edges(int(ys.sum()), ys.size)]
    return float(np.mean([_s_region_at(s, g, cx, cy) for cx, cy in splits]))


def _s_region_at(s, g, cx: int, cy: int) -> float:
    h, w = g.shape
    area = h * w
    w1 = cx * cy / area
    w2 = cy * (w - cx) / area
    w3 = (h - cy) * cx / area
    w4 = 1 - w1 - w2 - w3
    score = 0.0
    for wt, ys, xs in ((w1, slice(0, cy), slice(0, cx)), (w2, slice(0, cy), slice(cx, w)),
                       (w3, slice(cy, h), slice(0, cx)), (w4, slice(cy, h), slice(cx, w))):
        ps, pg = s[ys, xs], g[ys, xs]
        if ps.size:
            score += wt * _region_ssim(ps, pg)
    return score


def s_measure(s, g, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * object score + (1 - alpha) * region score``."""
    s, g = _check(s, g, binary=True)
    y = g.mean()
    if y == 0:
        return float(1 - s.mean())
    if y == 1:
        return float(s.mean())
    return float(max(0.0, alpha * _s_object(s, g) + (1 - alpha) * _s_region(s, g)))


@dataclass
class EvalReport:
    names: list[str] = field(default_factory=list)
    rows: list[tuple[float, float, float]] = field(default_factory=list)

    def add(self, name: str, s, g) -> tuple[float, float, float]:
        g = (np.asarray(g) >= 0.5).astype(np.float64)
        row = (mae(s, g), f_measure_max(s, g), s_measure(s, g))
        self.names.append(name)
        self.rows.append(row)
        return row

    @property
    def mae(self) -> float:
        return float(np.mean([r[0] for r in self.rows])) if self.rows else float("nan")

    @property
    def f_max(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def s_measure(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def to_csv(self) -> str:
        lines = ["name,mae,f_max,s_measure"]
        lines += [f"{n},{a!r},{b!r},{c!r}" for n, (a, b, c) in zip(self.names, self.rows)]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return f"images={len(self.rows)} mae={self.mae:.6f} f_max={self.f_max:.6f} s_measure={self.s_measure:.6f}"
