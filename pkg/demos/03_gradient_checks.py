"""Finite-difference checks, from one primitive to a whole module.

Shows the op table, a module check, and why kinks need the branch replay:
a ReLU input sitting within h of zero breaks a plain central difference.

    python3 demos/03_gradient_checks.py
"""
import numpy as np

from picr import gradcheck as gc
from picr import tensor as T
from picr.tensor import Tensor


def main():
    rows, seconds = gc.run("op")
    print(gc.format_table(rows))
    print(f"{len(rows)} ops in {seconds:.2f}s\n")

    rows, seconds = gc.run("module", "cmpi")
    print(gc.format_table(rows))
    print(f"interaction block in {seconds:.2f}s\n")

    x = Tensor(np.array([4e-4]), requires_grad=True)
    T.sum(T.relu(x)).backward()
    h = gc.H_STEP
    plain = (max(x.data[0] + h, 0) - max(x.data[0] - h, 0)) / (2 * h)
    [row] = gc.check_tensors(lambda: T.sum(T.relu(x)), {"x": x})
    print(f"relu at x = 4e-4: tape gradient {x.grad[0]:.3f}, plain central difference {plain:.3f}, "
          f"replayed difference error {row.max_rel_err:.1e} ({row.crossed} probes crossed the kink)")


if __name__ == "__main__":
    main()
