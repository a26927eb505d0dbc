"""Synthetic RGB-D scenes and the on-disk dataset layout ``<root>/{rgb,depth,gt}/<name>.png``."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from skimage.draw import ellipse, polygon

from .errors import ConfigError, DatasetError

log = logging.getLogger(__name__)

MIN_SIZE = 32
FG_RANGE = (0.01, 0.60)
DEPTH_CONTRAST = 0.2
IMAGE_EXTS = (".png", ".pgm", ".ppm")


@dataclass
class SynthSample:
    rgb: np.ndarray    # (3, H, W) float32 in [0, 1]
    depth: np.ndarray  # (1, H, W) float32 in [0, 1], smaller = nearer
    gt: np.ndarray     # (H, W) float32 in {0, 1}
    seed: int
    name: str = ""


def _texture(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    base = rng.uniform(0.2, 0.8, size=3)
    noise = gaussian_filter(rng.normal(0, 1, size=(3, H, W)), sigma=(0, 3, 3))
    noise /= np.abs(noise).max() + 1e-8
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    ramp = rng.uniform(-0.2, 0.2) * yy + rng.uniform(-0.2, 0.2) * xx
    return base[:, None, None] + 0.15 * noise + ramp


def _shape_mask(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    m = np.zeros((H, W), dtype=bool)
    kind = rng.integers(3)
    cy, cx = rng.uniform(0.2, 0.8) * H, rng.uniform(0.2, 0.8) * W
    ry, rx = rng.uniform(0.08, 0.3) * H, rng.uniform(0.08, 0.3) * W
    if kind == 0:
        rr, cc = ellipse(cy, cx, ry, rx, shape=(H, W), rotation=rng.uniform(0, np.pi))
    elif kind == 1:
        rr, cc = polygon([cy - ry, cy - ry, cy + ry, cy + ry], [cx - rx, cx + rx, cx + rx, cx - rx], shape=(H, W))
    else:
        n = int(rng.integers(3, 7))
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        rad = rng.uniform(0.5, 1.0, size=n)
        rr, cc = polygon(cy + ry * rad * np.sin(ang), cx + rx * rad * np.cos(ang), shape=(H, W))
    m[rr, cc] = True
    return m


def generate_sample(seed: int, size=(64, 64), quality: str = "good") -> SynthSample:
    """Render 1-3 near, distinctly coloured shapes over a far textured background.

    ``quality="degraded"`` blurs and corrupts the depth map so it no longer
    separates the object cleanly. Output is a pure function of ``seed``.
    """
    H, W = size
    if H < MIN_SIZE or W < MIN_SIZE:
        raise ConfigError(f"sample size must be at least {MIN_SIZE}x{MIN_SIZE}, got {H}x{W}")
    if quality not in ("good", "degraded"):
        raise ConfigError(f"quality must be 'good' or 'degraded', got {quality!r}")
    rng = np.random.default_rng(seed)
    while True:
        gt = np.zeros((H, W), dtype=bool)
        shapes = [_shape_mask(rng, H, W) for _ in range(int(rng.integers(1, 4)))]
        for m in shapes:
            gt |= m
        if FG_RANGE[0] <= gt.mean() <= FG_RANGE[1]:
            break

    rgb = _texture(rng, H, W)
    bg_depth = rng.uniform(0.7, 0.95) + gaussian_filter(rng.normal(0, 0.05, size=(H, W)), 4)
    depth = bg_depth.copy()
    for m in shapes:
        colour = rng.uniform(0, 1, size=3)
        # keep the object colour away from the mean background colour
        if m.any():  # a shape can fall entirely off-canvas
            bg_mean = rgb[:, m].mean(axis=1)
            if np.abs(colour - bg_mean).max() < 0.35:
                colour = np.where(bg_mean > 0.5, bg_mean - 0.45, bg_mean + 0.45)
        shade = gaussian_filter(rng.normal(0, 1, size=(H, W)), 2) * 0.04
        rgb[:, m] = colour[:, None] + shade[m]
        depth[m] = rng.uniform(0.1, 0.35) + shade[m]
    rgb = np.clip(rgb, 0, 1)
    depth = np.clip(depth, 0, 1)
    if quality == "degraded":
        depth = gaussian_filter(depth, 4) + rng.normal(0, 0.15, size=(H, W))
        depth = np.clip(0.5 * depth + 0.5 * rng.uniform(0, 1, size=(1, 1)) * gaussian_filter(
            rng.uniform(0, 1, size=(H, W)), 6) * 4, 0, 1)
    return SynthSample(rgb.astype(np.float32), depth[None].astype(np.float32),
                       gt.astype(np.float32), int(seed), f"synth_{seed:06d}")


def depth_contrast(sample: SynthSample) -> float:
    fg = sample.gt > 0.5
    d = sample.depth[0]
    return float(abs(d[~fg].mean() - d[fg].mean()))


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------
def augment(rgb: np.ndarray, depth: np.ndarray, gt: np.ndarray, rng: np.random.Generator):
    """Random horizontal flip and 90-degree rotation applied identically to all three maps."""
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))

    def f(a):
        if flip:
            a = a[..., ::-1]
        return np.ascontiguousarray(np.rot90(a, k, axes=(-2, -1)))

    return f(rgb), f(depth), f(gt)


# ----------------------------------------------------------------------
# image files
# ----------------------------------------------------------------------
def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def write_image(path, arr: np.ndarray) -> None:
    """Write (H, W) grayscale or (3, H, W) RGB floats in [0, 1] as 8-bit."""
    arr = np.asarray(arr)
    if arr.ndim == 3:
        img = Image.fromarray(to_uint8(arr.transpose(1, 2, 0)), mode="RGB")
    else:
        img = Image.fromarray(to_uint8(arr), mode="L")
    img.save(path)


def read_image(path, channels: int) -> np.ndarray:
    """Read an image as floats in [0, 1]: (3, H, W) for ``channels=3`` else (H, W).

    A colour file read as single-channel is averaged over its channels with a warning.
    """
    try:
        with Image.open(path) as img:
            img.load()
            arr = np.asarray(img)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    arr = arr.astype(np.float32) / (65535.0 if arr.dtype == np.uint16 else 255.0)
    if channels == 3:
        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=-1)
        return np.ascontiguousarray(arr[..., :3].transpose(2, 0, 1))
    if arr.ndim == 3:
        log.warning("%s has %d channels; averaging to one", path, arr.shape[-1])
        arr = arr[..., :3].mean(axis=-1)
    return arr


def write_sample(root, sample: SynthSample, fmt: str = "png") -> None:
    root = Path(root)
    ext = "." + fmt
    for sub in ("rgb", "depth", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_image(root / "rgb" / f"{sample.name}{'.png' if fmt == 'pgm' else ext}", sample.rgb)
    write_image(root / "depth" / f"{sample.name}{ext}", sample.depth[0])
    write_image(root / "gt" / f"{sample.name}{ext}", sample.gt)


@dataclass
class DatasetEntry:
    name: str
    rgb: Path
    depth: Path
    gt: Path | None


def _stems(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        return {}
    out = {}
    for p in sorted(d.iterdir()):
        if p.suffix.lower() in IMAGE_EXTS:
            if p.stem in out:
                raise DatasetError(f"duplicate stem {p.stem!r} in {d}")
            out[p.stem] = p
    return out


def load_dataset(root, require_gt: bool = True) -> list[DatasetEntry]:
    """Pair ``rgb``/``depth``/``gt`` files by stem; any unpaired file is an error."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    rgb, depth, gt = (_stems(root / s) for s in ("rgb", "depth", "gt"))
    subsets = {"rgb": rgb, "depth": depth}
    if require_gt or gt:
        subsets["gt"] = gt
    names = set().union(*subsets.values())
    for name in sorted(names):
        missing = [k for k, v in subsets.items() if name not in v]
        if missing:
            raise DatasetError(f"sample {name!r} has no {'/'.join(missing)} counterpart")
    return [DatasetEntry(n, rgb[n], depth[n], gt.get(n)) for n in sorted(names)]


def read_entry(entry: DatasetEntry) -> SynthSample:
    rgb = read_image(entry.rgb, 3)
    depth = read_image(entry.depth, 1)[None]
    gt = read_image(entry.gt, 1) if entry.gt is not None else np.zeros(depth.shape[1:], np.float32)
    return SynthSample(rgb, depth, gt, -1, entry.name)


def synthetic_dataset(n: int, size=(64, 64), seed: int = 0, quality: str = "good") -> list[SynthSample]:
    return [generate_sample(seed + i, size, quality) for i in range(n)]


def generate_to_dir(root, n: int, size=(64, 64), seed: int = 0, quality: str = "good", fmt: str = "png"):
    os.makedirs(root, exist_ok=True)
    for s in synthetic_dataset(n, size, seed, quality):
        write_sample(root, s, fmt)
