"""Acceptance criteria 1-9.

Each test prints one ``criterion N: PASS|FAIL ...`` line (collected again in
the terminal summary) and then asserts the same condition.
"""
import time

import numpy as np
import pytest

from oracles import random_pair, ref_fmax, ref_mae, ref_smeasure
from picr import checkpoint as ck
from picr import gradcheck as gc
from picr import tensor as T
from picr.attention import MASK_VALUES, masked_attention
from picr.cmpi import CmPI, build_masks, relation_modeling
from picr.config import ABLATIONS, apply_ablation, faithful, toy
from picr.data import synthetic_dataset
from picr.engine import predict, stack_batch, train
from picr.errors import CheckpointError
from picr.losses import SIDE_WEIGHTS, base_loss, bce_loss, downsample_target, iou_loss, ssim_loss, total_loss
from picr.metrics import f_measure_max, mae, s_measure
from picr.model import PICRNet
from picr.tensor import Tensor

RESULTS: dict[int, tuple[bool, str]] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = (ok, line)
    print(line)
    assert ok, line


# ----------------------------------------------------------------------
# 1. gradient suite
# ----------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_1_gradients():
    t0 = time.perf_counter()
    rows = []
    for scope in ("op", "module"):
        rows += gc.run(scope)[0]
    rows += gc.check_full(toy())
    elapsed = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r.max_rel_err)
    failed = [r.group for r in rows if not r.passed]
    ok = not failed and elapsed < 300
    report(1, ok, f"{len(rows)} groups (ops, modules, full toy model), max rel err {worst.max_rel_err:.2e} "
                  f"[{worst.group}], limit 1e-3, {elapsed:.0f}s of 300s"
                  + (f", failing: {', '.join(failed)}" if failed else ""))


# ----------------------------------------------------------------------
# 2. mask suppression
# ----------------------------------------------------------------------
def test_criterion_2_mask_suppression():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        L, c = int(rng.integers(2, 9)), 8
        q, k = rng.uniform(-1, 1, (L, c)), rng.uniform(-1, 1, (L, c))
        # scale q, k so the largest pre-mask score is exactly 10 in magnitude
        scale = np.sqrt(10 * np.sqrt(c) / np.abs(q @ k.T).max())
        mask = np.where(rng.random((L, L)) < 0.5, -100.0, 0.0)
        mask[np.arange(L), rng.integers(0, L, L)] = 0.0
        _, w = masked_attention(Tensor(q * scale), Tensor(k * scale), Tensor(rng.normal(size=(L, c))), mask,
                                return_weights=True)
        if (mask < 0).any():
            worst = max(worst, w.data[0][mask < 0].max())
    # the same bound inside the interaction block: the RGB row never attends to g_d in step one
    m = CmPI(np.random.default_rng(1), 8, 2).astype(np.float64)
    group = Tensor(rng.uniform(-1, 1, (4, 8)))
    _, (w1, _) = m.rm(group, m.m1, m.m2, return_weights=True)
    worst_rm = float(max(w1.data[:, 0, 3].max(), w1.data[:, 3, 0].max(), w1.data[:, 1, 2].max()))
    m1, _ = build_masks(1, -100.0)
    anti = np.array_equal(m1, -100.0 * np.fliplr(np.eye(4)))
    ok = worst < 1e-30 and worst_rm < 1e-30 and anti
    report(2, ok, f"max masked weight {worst:.1e} (attention), {worst_rm:.1e} (RM step 1), bound 1e-30; "
                  f"k=1 M1 is the 4x4 anti-diagonal: {anti}")


# ----------------------------------------------------------------------
# 3. batched vs sequential, linear cost
# ----------------------------------------------------------------------
def _looped(module, fr, fd, s):
    g_r, g_d = module.guidance(Tensor(fr), Tensor(fd), Tensor(s))
    B, H, W, _ = fr.shape
    out = np.zeros_like(fr)
    for b in range(B):
        for y in range(H):
            for x in range(W):
                group = T.concat([Tensor(fr[b, y, x][None]), Tensor(fd[b, y, x][None]),
                                  g_r[b:b + 1], g_d[b:b + 1]], axis=0)
                bar_r, bar_d = relation_modeling(group, module.rm, module.m1, module.m2)
                out[b, y, x] = module.fuse(bar_r, bar_d).data
    return out


def test_criterion_3_batched_and_linear():
    rng = np.random.default_rng(3)
    m = CmPI(np.random.default_rng(0), 16, 2).astype(np.float64)
    fr, fd = rng.normal(size=(2, 2, 8, 8, 16))
    s = rng.random((2, 8, 8))
    diff = np.abs(m(Tensor(fr), Tensor(fd), Tensor(s)).data - _looped(m, fr, fd, s)).max()
    ratios = []
    for dim, k in ((16, 1), (32, 1), (16, 3)):
        mod = CmPI(np.random.default_rng(0), dim, 2, window=k)
        counts = []
        for H, W in ((8, 8), (16, 8)):
            a, b = (Tensor(x.astype(np.float32)) for x in rng.normal(size=(2, 1, H, W, dim)))
            with T.no_grad(), T.count_flops() as fc:
                mod(a, b, Tensor(rng.random((1, H, W)).astype(np.float32)))
            counts.append(fc.total)
        ratios.append(counts[1] / counts[0])
    ok = diff <= 1e-5 and all(1.8 <= r <= 2.2 for r in ratios)
    report(3, ok, f"batched vs looped on 8x8: max |diff| {diff:.1e} (limit 1e-5); FLOP ratio at 2x H*W: "
                  + ", ".join(f"{r:.3f}" for r in ratios) + " (limit 2 +/- 10%)")


# ----------------------------------------------------------------------
# 4. overfit sanity
# ----------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_4_overfit():
    cfg = toy()
    samples = synthetic_dataset(8, (64, 64), seed=0)
    t0 = time.perf_counter()
    result = train(cfg, samples)
    elapsed = time.perf_counter() - t0
    totals = result.totals
    rgb, depth, gt = stack_batch(samples)
    train_mae = float(np.mean([mae(p, g) for p, g in zip(predict(result.model, rgb, depth), gt)]))
    ratio = totals[-1] / totals[0]
    ok = len(totals) <= 300 and ratio < 0.2 and train_mae < 0.05 and elapsed < 600
    report(4, ok, f"{len(totals)} steps, loss {totals[0]:.3f} -> {totals[-1]:.3f} (ratio {ratio:.3f}, limit 0.2), "
                  f"train MAE {train_mae:.4f} (limit 0.05), {elapsed:.0f}s of 600s")


# ----------------------------------------------------------------------
# 5. losses
# ----------------------------------------------------------------------
def test_criterion_5_losses():
    rng = np.random.default_rng(5)
    checks = {}
    g = (rng.random((16, 16)) < 0.4).astype(np.float64)
    soft = rng.random((16, 16))
    checks["bce S==G at clamp floor"] = bce_loss(Tensor(g), g).item() <= -np.log(1 - 1e-7) + 1e-12
    checks["ssim S==G"] = abs(ssim_loss(Tensor(soft), soft).item()) < 1e-6
    checks["iou S==G"] = abs(iou_loss(Tensor(g), g).item()) < 1e-6
    half = np.full((8, 8), 0.5)
    checks["bce 0.5/0.5 = ln2"] = abs(bce_loss(Tensor(half), half).item() - np.log(2)) < 1e-12
    checks["bce 0.5 vs random binary = ln2"] = abs(bce_loss(Tensor(half), g[:8, :8]).item() - np.log(2)) < 1e-12
    gb = (rng.random((16, 16)) < 0.5).astype(np.float64)
    checks["ssim 1-G >= 1"] = ssim_loss(Tensor(1 - gb), gb).item() >= 1.0
    v = [ssim_loss(Tensor(rng.random((12, 12))), rng.random((12, 12))).item() for _ in range(20)]
    checks["ssim in [0,2]"] = all(0 <= x <= 2 for x in v)
    checks["iou zeros vs ones = 1-1/65"] = abs(iou_loss(Tensor(np.zeros((8, 8))), np.ones((8, 8))).item()
                                              - (1 - 1 / 65)) < 1e-12
    checks["iou empty = 0"] = iou_loss(Tensor(np.zeros((8, 8))), np.zeros((8, 8))).item() == 0.0

    G = (rng.random((2, 64, 64)) < 0.4).astype(np.float64)
    sides = [Tensor(np.clip(downsample_target(G, (n, n)) + 0.2 * rng.normal(size=(2, n, n)), 0.01, 0.99))
             for n in (16, 8, 4, 2)]
    s_out = Tensor(rng.uniform(0.05, 0.95, G.shape))
    rep = total_loss(sides, s_out, G)
    recomposed = abs(rep.recomposed() - rep.value)
    by_hand = base_loss(s_out, G)[0].item() + sum(
        w * base_loss(s, downsample_target(G, s.shape[-2:]))[0].item() for w, s in zip(SIDE_WEIGHTS, sides))
    checks["recomposition 1e-6"] = recomposed < 1e-6 and abs(by_hand - rep.value) < 1e-6
    checks["side weights 1/2^i"] = SIDE_WEIGHTS == tuple(0.5 ** i for i in range(1, 5))
    bad = [k for k, v in checks.items() if not v]
    report(5, not bad, f"{len(checks) - len(bad)}/{len(checks)} loss checks, recomposition error {recomposed:.1e}"
                       + (f", failing: {'; '.join(bad)}" if bad else ""))


# ----------------------------------------------------------------------
# 6. metrics vs brute force
# ----------------------------------------------------------------------
def test_criterion_6_metric_oracles():
    worst = {"mae": 0.0, "f_max": 0.0, "s_measure": 0.0}
    for seed in range(100):
        s, g = random_pair(seed, 16)
        worst["mae"] = max(worst["mae"], abs(mae(s, g) - ref_mae(s, g)))
        worst["f_max"] = max(worst["f_max"], abs(f_measure_max(s, g) - ref_fmax(s, g)))
        worst["s_measure"] = max(worst["s_measure"], abs(s_measure(s, g) - ref_smeasure(s, g)))
    ok = all(v <= 1e-6 for v in worst.values())
    report(6, ok, "100 random 16x16 pairs, max |diff| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                  + " (limit 1e-6)")


# ----------------------------------------------------------------------
# 7. shape pipeline
# ----------------------------------------------------------------------
def _shapes(cfg):
    size = cfg.model.input_size
    model = PICRNet(cfg)
    rng = np.random.default_rng(7)
    with T.no_grad():
        rgb = Tensor(rng.random((1, 3, size, size)).astype(np.float32))
        depth = rng.random((1, 1, size, size)).astype(np.float32)
        pyr_r, pyr_d = model.encoder.encode_pair(rgb, T.concat([Tensor(depth)] * 3, axis=1))
        pred = model(rgb, depth)
    grids = [g[0] for g in pyr_r.grids]
    sides = [s.shape[1] for s in pred.sides]
    out = pred.out.data
    in_range = bool(out.min() > 0 and out.max() < 1)
    return grids, sides, out.shape, in_range


def test_criterion_7_shape_pipeline():
    details, ok = [], True
    for name, cfg, want in (("faithful", faithful(), [56, 28, 14, 7]), ("toy", toy(), [16, 8, 4, 2])):
        grids, sides, out_shape, in_range = _shapes(cfg)
        size = cfg.model.input_size
        good = grids == want and sides == want and out_shape == (1, size, size) and in_range
        ok &= good
        details.append(f"{name}: grids {'/'.join(map(str, grids))}, sides {'/'.join(map(str, sides))}, "
                       f"S_out {out_shape[1]}x{out_shape[2]} in (0,1): {in_range}")
    report(7, ok, "; ".join(details))


# ----------------------------------------------------------------------
# 8. ablation wiring
# ----------------------------------------------------------------------
def lin(a, b, bias=True):
    return a * b + (b if bias else 0)


def ln(c):
    return 2 * c


def conv(a, b):
    return 9 * a * b + b


def mlp(a, h):
    return lin(a, h) + lin(h, a)


def fuse(c):
    return 2 * mlp(c, 2 * c) + lin(2 * c, c)


def rm_step_params(c, heads):
    d = c // heads
    return 3 * heads * d * d + 3 * heads * d


def rm(c, heads, steps=2):
    return ln(c) + steps * rm_step_params(c, heads) + lin(c, c)


def swin_pair(c):
    return 2 * (ln(c) + lin(c, 3 * c) + lin(c, c) + ln(c) + mlp(c, 4 * c))


def cross_attention(c):
    return 2 * ln(c) + 2 * 4 * lin(c, c) + fuse(c)


def cnnr(c1, width, vgg=(64, 128), r=4):
    v1, v2 = vgg

    def ca(ch):
        return lin(ch, ch // r) + lin(ch // r, ch)

    return (conv(3, v1) + conv(v1, v1) + conv(v1, v2) + conv(v2, v2) + conv(c1, width) + ca(width + v2)
            + conv(width + v2, width) + ca(width + v1) + conv(width + v1, width) + conv(width, 1))


def expected_deltas(cfg):
    m = cfg.model
    dims = [m.embed_dim * 2 ** i for i in range(4)]
    heads = m.cmpi_heads
    full_cmpi = [rm(c, h) + fuse(c) for c, h in zip(dims, heads)]
    d = {aid: 0 for aid in ABLATIONS}
    d[1] = d[2] = -sum(full_cmpi)
    d[3] = sum(lin(2 * c, c) - f for c, f in zip(dims, full_cmpi))
    d[4] = sum(cross_attention(c) - f for c, f in zip(dims, full_cmpi))
    d[5] = sum(2 * conv(c, c) - swin_pair(c) for c in dims)
    d[6] = -cnnr(dims[0], m.cnnr_width, tuple(m.vgg_widths), m.ca_reduction)
    d[7] = -sum(rm(c, h) for c, h in zip(dims, heads))
    d[8] = -sum(rm_step_params(c, h) for c, h in zip(dims, heads))
    d[15] = sum(lin(4 * c, c) - f for c, f in zip(dims, full_cmpi))
    return d


def test_criterion_8_ablations():
    base = toy()
    samples = synthetic_dataset(2, (64, 64), seed=0)
    full = PICRNet(base)
    n_full = full.num_parameters()
    want = expected_deltas(base)
    problems, ran = [], 0
    variants = [(f"id {aid}", apply_ablation(base, aid), want[aid]) for aid in range(1, 16)]
    for value in MASK_VALUES:
        cfg = base.copy()
        cfg.model.mask_value = value
        variants.append((f"mask {value:g}", cfg, 0))
    for name, cfg, delta in variants:
        res = train(cfg, samples, max_steps=1)
        if not np.isfinite(res.totals).all():
            problems.append(f"{name} non-finite")
        ran += 1
        got = res.model.num_parameters() - n_full
        if got != delta:
            problems.append(f"{name} delta {got} != {delta}")
    cnnr_names = {n for n, _ in full.named_parameters()} - {n for n, _ in PICRNet(apply_ablation(base, 6)).named_parameters()}
    if cnnr_names != {n for n, _ in full.named_parameters() if n.startswith("cnnr.")}:
        problems.append("w/o CNNR removes more than the refinement tensors")
    rgb, depth, _ = stack_batch(samples)
    ref = predict(full, rgb, depth)
    diffs = {}
    for aid in (7, 1):
        diffs[aid] = float(np.abs(predict(PICRNet(apply_ablation(base, aid)), rgb, depth) - ref).max())
        if diffs[aid] == 0:
            problems.append(f"id {aid} prediction identical to the full model")
    report(8, not problems, f"{ran} variants trained one step, parameter deltas audited, "
                            f"max |pred - full| w/o RM {diffs[7]:.2e}, w/ addition {diffs[1]:.2e}"
                            + (f"; problems: {'; '.join(problems)}" if problems else ""))


# ----------------------------------------------------------------------
# 9. determinism and persistence
# ----------------------------------------------------------------------
def test_criterion_9_determinism(tmp_path):
    samples = synthetic_dataset(4, (64, 64), seed=0)
    a = train(toy(), samples, max_steps=10)
    b = train(toy(), samples, max_steps=10)
    bitwise = np.array(a.losses).tobytes() == np.array(b.losses).tobytes()
    ck.save(tmp_path / "a.ckpt", ck.from_model(a.model, a.optimizer))
    ck.save(tmp_path / "b.ckpt", ck.load(tmp_path / "a.ckpt"))
    identical = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    other = apply_ablation(toy(), 13)
    target = PICRNet(other)
    before = [p.data.copy() for p in target.parameters()]
    try:
        ck.apply_to_model(ck.load(tmp_path / "a.ckpt"), target)
        refused = False
    except CheckpointError:
        refused = all(np.array_equal(x, p.data) for x, p in zip(before, target.parameters()))
    ok = bitwise and identical and refused
    report(9, ok, f"10-step trajectory bitwise equal: {bitwise}; save-load-save byte identical: {identical}; "
                  f"mismatched config refused with no partial load: {refused}")

