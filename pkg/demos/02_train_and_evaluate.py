"""Train the toy model on synthetic scenes, then score it on held-out ones.

    python3 demos/02_train_and_evaluate.py [--steps 120] [--out runs/demo]

The same flow is available from the command line::

    picr gen --out data/train -n 8
    picr train --data data/train --out runs/demo --steps 120
    picr eval --checkpoint runs/demo/model.ckpt --data data/test
"""
import argparse
import time
from pathlib import Path

from picr.config import toy
from picr.data import synthetic_dataset, write_image
from picr.engine import evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=120)
    ap.add_argument("--out", default="runs/demo")
    args = ap.parse_args()

    cfg = toy()
    train_set = synthetic_dataset(8, (64, 64), seed=0)
    test_set = synthetic_dataset(4, (64, 64), seed=1000)
    test_bad = synthetic_dataset(4, (64, 64), seed=1000, quality="degraded")

    t0 = time.perf_counter()
    result = train(cfg, train_set, args.out, max_steps=args.steps)
    totals = result.totals
    print(f"{len(totals)} steps in {time.perf_counter() - t0:.0f}s, loss {totals[0]:.3f} -> {totals[-1]:.3f}")

    for name, samples in (("train", train_set), ("test", test_set), ("test, degraded depth", test_bad)):
        print(f"{name:>22}: {evaluate(result.model, samples).summary()}")

    # side by side: rgb, depth, ground truth and prediction for the first test scene
    dump = Path(args.out) / "maps"
    evaluate(result.model, test_set[:1], dump)
    s = test_set[0]
    write_image(dump / f"{s.name}_rgb.png", s.rgb)
    write_image(dump / f"{s.name}_depth.png", s.depth[0])
    write_image(dump / f"{s.name}_gt.png", s.gt)
    print(f"maps written to {dump}")


if __name__ == "__main__":
    main()
