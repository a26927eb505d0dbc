"""Training, evaluation and single-image inference loops."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import tensor as T
from .config import Config
from .data import SynthSample, augment, read_image, read_entry, write_image
from .errors import ShapeError, TrainingError
from .losses import total_loss
from .metrics import EvalReport, mae
from .model import PICRNet
from .optim import Adam, step_decay_lr
from .tensor import bilinear_matrix

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "total", "bce_out", "ssim_out", "iou_out", "side1", "side2", "side3", "side4")


def stack_batch(samples: list[SynthSample], rng: np.random.Generator | None = None):
    rgb, depth, gt = [], [], []
    for s in samples:
        r, d, g = (s.rgb, s.depth, s.gt) if rng is None else augment(s.rgb, s.depth, s.gt, rng)
        rgb.append(r)
        depth.append(d)
        gt.append(g)
    return np.stack(rgb), np.stack(depth), np.stack(gt)


@dataclass
class TrainResult:
    model: PICRNet
    optimizer: Adam
    losses: list[list[float]] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [row[1] for row in self.losses]


def _check_finite(step: int, report) -> None:
    named = [("total", report.value), ("bce_out", report.bce), ("ssim_out", report.ssim), ("iou_out", report.iou)]
    named += [(f"side{i + 1}", v) for i, v in enumerate(report.per_side)]
    for name, v in named:
        if not math.isfinite(v):
            raise TrainingError(f"non-finite loss at step {step}: term {name} = {v}")


def train(cfg: Config, samples: list[SynthSample], out_dir=None, max_steps: int | None = None,
          model: PICRNet | None = None) -> TrainResult:
    """Adam on the mixed loss; writes ``losses.csv`` and ``model.ckpt`` when ``out_dir`` is given."""
    if not samples:
        raise ValueError("training needs at least one sample")
    o = cfg.optim
    model = model or PICRNet(cfg)
    opt = Adam(model.trainable_parameters(), lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps)
    rng = np.random.default_rng(cfg.seed + 1)
    batch = min(o.batch, len(samples))
    steps_per_epoch = math.ceil(len(samples) / batch)
    limit = max_steps if max_steps is not None else (o.max_steps or None)
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "losses.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
    result = TrainResult(model, opt)
    step = 0
    try:
        for epoch in range(o.epochs):
            opt.lr = step_decay_lr(o.lr, epoch, o.decay_every, o.decay_factor)
            order = rng.permutation(len(samples))
            for b in range(steps_per_epoch):
                idx = order[b * batch:(b + 1) * batch]
                rgb, depth, gt = stack_batch([samples[i] for i in idx], rng if o.augment else None)
                pred = model(rgb, depth)
                report = total_loss(pred.sides, pred.out, gt)
                _check_finite(step, report)
                opt.zero_grad()
                report.total.backward()
                opt.step()
                row = [step, *report.row()]
                result.losses.append(row)
                log.info("step %d epoch %d lr %.3g total %.5f", step, epoch, opt.lr, row[1])
                if writer is not None:
                    writer.writerow([step] + [repr(float(v)) for v in row[1:]])
                step += 1
                if limit and step >= limit:
                    break
            if out is not None and o.checkpoint_every and (epoch + 1) % o.checkpoint_every == 0:
                ckpt_mod.save(out / f"epoch{epoch + 1:03d}.ckpt", ckpt_mod.from_model(model, opt))
            if limit and step >= limit:
                break
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        ckpt_mod.save(out / "model.ckpt", ckpt_mod.from_model(model, opt))
    return result


def predict(model: PICRNet, rgb: np.ndarray, depth: np.ndarray, batch: int = 8) -> np.ndarray:
    """Saliency maps (B, H, W) for stacked inputs, without recording a tape."""
    outs = []
    with T.no_grad():
        for i in range(0, len(rgb), batch):
            outs.append(model(rgb[i:i + batch], depth[i:i + batch]).out.data)
    return np.concatenate(outs).astype(np.float64)


def resize_map(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the last two axes."""
    H, W = x.shape[-2:]
    if (H, W) == tuple(size):
        return x
    return bilinear_matrix(H, size[0]) @ x @ bilinear_matrix(W, size[1]).T


def evaluate_maps(names, preds, gts) -> EvalReport:
    report = EvalReport()
    for n, s, g in zip(names, preds, gts):
        report.add(n, s, g)
    return report


def evaluate(model: PICRNet, samples: list[SynthSample], dump_dir=None) -> EvalReport:
    size = model.cfg.model.input_size
    for s in samples:
        if s.rgb.shape[1:] != (size, size):
            raise ShapeError(f"sample {s.name} is {s.rgb.shape[1]}x{s.rgb.shape[2]}, "
                             f"the checkpoint expects {size}x{size}")
    rgb, depth, gt = stack_batch(samples)
    preds = predict(model, rgb, depth)
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
        for s, p in zip(samples, preds):
            write_image(Path(dump_dir) / f"{s.name}.png", p)
    return evaluate_maps([s.name for s in samples], preds, gt)


@dataclass
class InferResult:
    saliency: np.ndarray
    mae: float | None = None


def infer(model: PICRNet, rgb_path, depth_path, out_path, gt_path=None) -> InferResult:
    """Resize inputs to the model size, predict, resize back, write an 8-bit PNG."""
    rgb = read_image(rgb_path, 3)
    depth = read_image(depth_path, 1)
    if rgb.shape[1:] != depth.shape:
        raise ShapeError(f"rgb {rgb.shape[1:]} and depth {depth.shape} sizes differ")
    H, W = depth.shape
    size = model.cfg.model.input_size
    rgb_in = np.clip(resize_map(rgb.astype(np.float64), (size, size)), 0, 1).astype(np.float32)
    depth_in = resize_map(depth.astype(np.float64), (size, size)).astype(np.float32)
    pred = predict(model, rgb_in[None], depth_in[None, None])[0]
    sal = np.clip(resize_map(pred, (H, W)), 0, 1)
    write_image(out_path, sal)
    score = None
    if gt_path is not None:
        score = mae(sal, read_image(gt_path, 1))
    return InferResult(sal, score)


def load_samples(entries) -> list[SynthSample]:
    return [read_entry(e) for e in entries]
