"""Adam with a step-decay learning-rate schedule."""
from __future__ import annotations

import numpy as np


def step_decay_lr(base_lr: float, epoch: int, decay_every: int, factor: float) -> float:
    """Learning rate after ``epoch`` whole epochs: multiplied by ``factor`` every ``decay_every``."""
    if decay_every <= 0:
        return base_lr
    return base_lr * factor ** (epoch // decay_every)


class Adam:
    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for n, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for n, _ in self.params:
            out[f"m.{n}"] = self.m[n]
            out[f"v.{n}"] = self.v[n]
        return out

    def load_state(self, t: int, arrays: dict[str, np.ndarray]) -> None:
        self.t = t
        for n, p in self.params:
            self.m[n] = arrays[f"m.{n}"].astype(p.dtype).copy()
            self.v[n] = arrays[f"v.{n}"].astype(p.dtype).copy()
