"""Walk through one interaction block at a single location.

Builds the k=1 point group (RGB, depth, RGB guidance, depth guidance), shows
the two attention masks and prints who each row attends to in both steps.

    python3 demos/01_point_interaction.py
"""
import numpy as np

from picr.cmpi import CmPI, build_group, build_masks
from picr.tensor import Tensor

ROWS = ("f_r", "f_d", "g_r", "g_d")


def show(title, m):
    print(title)
    print("       " + "  ".join(f"{r:>6}" for r in ROWS))
    for name, row in zip(ROWS, m):
        print(f"{name:>6} " + "  ".join(f"{v:6.3f}" if abs(v) < 10 else f"{v:6.0f}" for v in row))
    print()


def main():
    m1, m2 = build_masks(1, -100.0)
    show("step-1 mask (RGB locals never see g_d, depth locals never see g_r)", m1)
    show("step-2 mask (modalities stay apart)", m2)

    rng = np.random.default_rng(0)
    block = CmPI(rng, dim=8, heads=2).astype(np.float64)
    f_r, f_d = (Tensor(a) for a in rng.normal(size=(2, 1, 4, 4, 8)))
    saliency = Tensor(rng.random((1, 4, 4)))
    g_r, g_d = block.guidance(f_r, f_d, saliency)
    group = build_group(f_r, f_d, g_r, g_d)[0, 1, 2]  # location (1, 2)
    _, (w1, w2) = block.rm(group, block.m1, block.m2, return_weights=True)
    show("step-1 attention weights, head 0", w1.data[0])
    show("step-2 attention weights, head 0", w2.data[0])

    out = block(f_r, f_d, saliency)
    print(f"fused map {out.shape}, location (1, 2) -> {np.round(out.data[0, 1, 2], 3)}")


if __name__ == "__main__":
    main()
