"""Central finite-difference verification of tape gradients.

Everything here runs in float64 so that the comparison measures autodiff
error rather than rounding. Each check probes a few random elements of every
parameter (and differentiable input), perturbs them by ``±h`` and compares
``(L(p+h) - L(p-h)) / 2h`` with the analytic gradient using
``|g - g_fd| / (|g_fd| + 1e-8)``.

ReLU, clamp and max-pool make the loss piecewise smooth. A perturbation of
``±h`` regularly pushes some unit across a kink, where a plain central
difference measures a mix of two pieces. The perturbed evaluations
therefore replay the branch pattern recorded at the unperturbed point, so
both sides are evaluated on the piece the tape differentiated. How many
probes needed this is reported as ``crossed``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

H_STEP = 1e-3
TOLERANCE = 1e-3
PROBES = 5
DENOM_FLOOR = 1e-8


@dataclass
class GradRow:
    group: str
    max_rel_err: float
    probes: int
    crossed: int = 0
    worst: tuple | None = None  # (tensor name, flat index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(numeric) + DENOM_FLOOR)


def check_tensors(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], probes: int = PROBES,
                  h: float = H_STEP, seed: int = 0, group_of: Callable[[str], str] | None = None) -> list[GradRow]:
    """Compare analytic and central-difference gradients for every tensor in ``tensors``.

    ``loss_fn`` rebuilds the scalar loss from the current tensor values.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for n, t in tensors.items()}

    with T.no_grad(), T.record_branches() as base:
        loss_fn()

    def value() -> tuple[float, int]:
        with T.no_grad(), T.record_branches(base.patterns) as log:
            return float(loss_fn().data), log.crossed

    rows: dict[str, GradRow] = {}
    for name, t in tensors.items():
        group = group_of(name) if group_of else name
        row = rows.setdefault(group, GradRow(group, 0.0, 0))
        flat = t.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(probes, flat.size), replace=False).tolist():
            orig = flat[i]
            flat[i] = orig + h
            fp, cp = value()
            flat[i] = orig - h
            fm, cm = value()
            flat[i] = orig
            row.crossed += bool(cp or cm)
            num = (fp - fm) / (2 * h)
            err = rel_error(float(analytic[name].reshape(-1)[i]), num)
            if err >= row.max_rel_err:
                row.max_rel_err = err
                row.worst = (name, i, float(analytic[name].reshape(-1)[i]), num)
            row.probes += 1
    return list(rows.values())


# ----------------------------------------------------------------------
# op scope
# ----------------------------------------------------------------------
def _r(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape).astype(np.float64), requires_grad=True)


def _op_cases(rng) -> dict[str, tuple[Callable, list[Tensor]]]:
    from .attention import masked_attention

    a, b = _r(rng, 3, 4), _r(rng, 3, 4)
    bc = _r(rng, 1, 4)
    pos = _r(rng, 3, 4, lo=0.5, hi=2.0)
    m1, m2 = _r(rng, 2, 3, 4), _r(rng, 4, 5)
    x4 = _r(rng, 2, 3, 6, 6)
    x7 = _r(rng, 1, 3, 7, 7)
    w3 = _r(rng, 4, 3, 3, 3)
    bias = _r(rng, 4)
    w1 = _r(rng, 4, 3, 1, 1)
    gam, bet = _r(rng, 5), _r(rng, 5)
    ln_in = _r(rng, 3, 5)
    q, k, v = _r(rng, 2, 4, 6), _r(rng, 2, 4, 6), _r(rng, 2, 4, 6)
    mask = np.array([[0, 0, 0, -100.0], [0, 0, -100.0, 0], [0, -100.0, 0, 0], [-100.0, 0, 0, 0]])
    return {
        "add": (lambda: a + bc, [a, bc]),
        "sub": (lambda: a - b, [a, b]),
        "mul": (lambda: a * bc, [a, bc]),
        "div": (lambda: a / pos, [a, pos]),
        "matmul": (lambda: m1 @ m2, [m1, m2]),
        "exp": (lambda: T.exp(a), [a]),
        "log": (lambda: T.log(pos), [pos]),
        "relu": (lambda: T.relu(a), [a]),
        "sigmoid": (lambda: T.sigmoid(a * 3), [a]),
        "gelu": (lambda: T.gelu(a * 2), [a]),
        "softmax": (lambda: T.softmax(a * 3, axis=-1), [a]),
        "layernorm": (lambda: T.layernorm(ln_in, gam, bet), [ln_in, gam, bet]),
        "sum": (lambda: T.sum(m1, axis=1), [m1]),
        "mean": (lambda: T.mean(m1, axis=(0, 2), keepdims=True), [m1]),
        "reshape_transpose": (lambda: m1.reshape(4, 6).transpose(1, 0), [m1]),
        "expand": (lambda: T.expand(bc, (2, 3, 4)), [bc]),
        "getitem": (lambda: m1[:, 1:, ::2] + m1[0, [0, 2, 2]].sum(), [m1]),
        "concat": (lambda: T.concat([a, b, bc], axis=0), [a, b, bc]),
        "pad": (lambda: T.pad(a, ((1, 0), (2, 1))), [a]),
        "roll": (lambda: T.roll(m1, (1, -2), axis=(1, 2)), [m1]),
        "conv2d": (lambda: T.conv2d(x4, w3, bias, padding=1), [x4, w3, bias]),
        "conv2d_stride2": (lambda: T.conv2d(x7, w3, bias, padding=0, stride=2), [x7, w3, bias]),
        "conv2d_1x1": (lambda: T.conv2d(x4, w1, None), [x4, w1]),
        "maxpool2x": (lambda: T.maxpool2x(x4), [x4]),
        "avgpool_global": (lambda: T.avgpool_global(x4), [x4]),
        "upsample2x_nearest": (lambda: T.upsample2x_nearest(x4), [x4]),
        "resize_bilinear": (lambda: T.resize_bilinear(x4, (4, 9)), [x4]),
        "clip": (lambda: T.clip(a, -0.5, 0.5), [a]),
        "masked_attention": (lambda: masked_attention(q, k, v, mask, num_heads=2), [q, k, v]),
    }


OP_NAMES = tuple(_op_cases(np.random.default_rng(0)).keys())


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum(out * weights)


def check_op(name: str, seed: int = 0) -> list[GradRow]:
    rng = np.random.default_rng(seed)
    cases = _op_cases(rng)
    fn, inputs = cases[name]
    with T.no_grad():
        shape = fn().shape
    weights = rng.normal(size=shape)
    rows = check_tensors(lambda: _weighted_sum(fn(), weights), {f"{name}[{i}]": t for i, t in enumerate(inputs)},
                         seed=seed, group_of=lambda _: name)
    return rows


# ----------------------------------------------------------------------
# module scope
# ----------------------------------------------------------------------
def _module_case(name: str, rng):
    """Return (loss_fn, named tensors) for one module in float64."""
    from .attention import AttentionConfig, SwinPair
    from .cmpi import CmPI
    from .cnnr import CNNR
    from .decoder import DecoderStage
    from .encoder import PatchEmbed, PatchMerging
    from .losses import bce_loss, iou_loss, ssim_loss, total_loss

    f64 = np.float64
    if name == "encoder_stage":
        merge = PatchMerging(rng, 8).astype(f64)
        blocks = SwinPair(rng, AttentionConfig(16, 2, 2, -100.0)).astype(f64)
        x = _r(rng, 2, 6, 6, 8)
        w = rng.normal(size=(2, 9, 16))

        def loss():
            f = merge(x)
            return _weighted_sum(blocks(f.reshape(2, 9, 16), (3, 3)), w)

        return loss, {**_named("merge", merge), **_named("blocks", blocks), "input": x}
    if name == "patch_embed":
        pe = PatchEmbed(rng, 3, 8).astype(f64)
        x = _r(rng, 1, 3, 8, 8)
        w = rng.normal(size=(1, 2, 2, 8))
        return (lambda: _weighted_sum(pe(x), w)), {**_named("patch_embed", pe), "input": x}
    if name.startswith("cmpi"):
        k = 3 if name == "cmpi_k3" else 1
        mod = CmPI(rng, 8, 2, window=k, mask_value=-100.0).astype(f64)
        _scramble(mod, rng)
        fr, fd = _r(rng, 2, 3, 3, 8), _r(rng, 2, 3, 3, 8)
        s = _r(rng, 2, 3, 3, lo=0.1, hi=0.9)
        w = rng.normal(size=(2, 3, 3, 8))
        return (lambda: _weighted_sum(mod(fr, fd, s), w)), \
            {**_named("cmpi", mod), "f_r": fr, "f_d": fd, "s_up": s}
    if name == "decoder_stage":
        st = DecoderStage(rng, AttentionConfig(8, 2, 2, -100.0), prev_dim=16).astype(f64)
        _scramble(st, rng)
        f, prev = _r(rng, 1, 4, 4, 8), _r(rng, 1, 2, 2, 16)
        w = rng.normal(size=(1, 4, 4))

        def loss():
            return _weighted_sum(st.side_output(st(f, prev)), w)

        return loss, {**_named("decoder", st), "f_rd": f, "f_prev": prev}
    if name == "cnnr":
        mod = CNNR(rng, 8, 8, (8, 16), 4).astype(f64)
        _scramble(mod, rng)
        f = _r(rng, 1, 2, 2, 8)
        rgb = _r(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
        w = rng.normal(size=(1, 8, 8))
        return (lambda: _weighted_sum(mod(f, rgb), w)), {**_named("cnnr", mod), "f_dec1": f, "rgb": rgb}
    g = (rng.uniform(size=(2, 12, 12)) > 0.5).astype(f64)
    s = _r(rng, 2, 12, 12, lo=0.05, hi=0.95)
    if name == "bce_loss":
        return (lambda: bce_loss(s, g)), {"S": s}
    if name == "ssim_loss":
        return (lambda: ssim_loss(s, g)), {"S": s}
    if name == "iou_loss":
        return (lambda: iou_loss(s, g)), {"S": s}
    if name == "total_loss":
        gt = (rng.uniform(size=(1, 32, 32)) > 0.5).astype(f64)
        sides = [_r(rng, 1, 32 // 2 ** (i + 2), 32 // 2 ** (i + 2), lo=0.05, hi=0.95) for i in range(4)]
        out = _r(rng, 1, 32, 32, lo=0.05, hi=0.95)
        return (lambda: total_loss(sides, out, gt).total), \
            {"S_out": out, **{f"S_{i + 1}": t for i, t in enumerate(sides)}}
    raise KeyError(name)


MODULE_NAMES = ("patch_embed", "encoder_stage", "cmpi", "cmpi_k3", "decoder_stage", "cnnr",
                "bce_loss", "ssim_loss", "iou_loss", "total_loss")


def _named(prefix: str, module) -> dict[str, Tensor]:
    return {f"{prefix}.{n}": p for n, p in module.named_parameters()}


def _scramble(module, rng, std: float = 0.05) -> None:
    """Give zero-initialised biases and tiny weights visible magnitudes so every path carries gradient."""
    for _, p in module.named_parameters():
        p.data = p.data + rng.normal(0.0, std, size=p.shape)


def check_module(name: str, seed: int = 0) -> list[GradRow]:
    rng = np.random.default_rng(seed)
    loss_fn, tensors = _module_case(name, rng)
    return check_tensors(loss_fn, tensors, seed=seed, group_of=lambda n: f"{name}:{_group(n)}")


# ----------------------------------------------------------------------
# full scope
# ----------------------------------------------------------------------
def _group(name: str) -> str:
    """Module path up to the first list index: ``encoder.stages.0``, ``cmpi.2``, ``cnnr.pred``."""
    out = []
    for p in name.split("."):
        if len(out) == 2 and not p.isdigit():
            break
        out.append(p)
        if p.isdigit():
            break
    return ".".join(out)


def check_full(cfg=None, size: int = 32, seed: int = 0, probes: int = PROBES) -> list[GradRow]:
    """Whole-network check on one synthetic sample at ``size`` x ``size``."""
    from .config import toy
    from .data import generate_sample
    from .losses import total_loss
    from .model import PICRNet

    cfg = (cfg or toy()).copy()
    cfg.model.input_size = size
    cfg.seed = seed
    model = PICRNet(cfg.validate()).astype(np.float64)
    sample = generate_sample(seed, (max(size, 32), max(size, 32)))
    rgb = sample.rgb[None].astype(np.float64)[..., :size, :size]
    depth = sample.depth[None].astype(np.float64)[..., :size, :size]
    gt = sample.gt[None].astype(np.float64)[..., :size, :size]

    def loss():
        p = model(Tensor(rgb), depth)
        return total_loss(p.sides, p.out, gt).total

    tensors = dict(model.named_parameters())
    return check_tensors(loss, tensors, probes=probes, seed=seed, group_of=_group)


def run(scope: str, target: str | None = None, seed: int = 0) -> tuple[list[GradRow], float]:
    """Run a gradient check scope; returns rows and elapsed seconds."""
    t0 = time.perf_counter()
    if scope == "op":
        names = [target] if target else list(OP_NAMES)
        rows = [r for n in names for r in check_op(n, seed)]
    elif scope == "module":
        names = [target] if target else list(MODULE_NAMES)
        rows = [r for n in names for r in check_module(n, seed)]
    elif scope == "full":
        rows = check_full(seed=seed)
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return rows, time.perf_counter() - t0


def format_table(rows: list[GradRow]) -> str:
    lines = [f"{'group':<40s} {'max_rel_err':>12s} {'probes':>6s} {'status':>6s}"]
    for r in rows:
        lines.append(f"{r.group:<40s} {r.max_rel_err:12.3e} {r.probes:6d} {'PASS' if r.passed else 'FAIL':>6s}")
    return "\n".join(lines)
