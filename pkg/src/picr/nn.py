"""Parameter containers and the small layer set the network is built from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples redrawn until they fall inside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Module:
    """Base class; parameters and submodules are discovered from attributes.

    Attributes are visited in assignment order, lists of modules are indexed,
    so ``named_parameters`` is stable across runs (checkpoints rely on it).
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


class Linear(Module):
    """``x @ W + b`` with W stored (in, out). ``std=None`` scales the init by fan-in (1/sqrt(d_in))."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True,
                 std: float | None = 0.02):
        std = 1.0 / np.sqrt(d_in) if std is None else std
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.weight, self.bias)


class Conv2d(Module):
    """Same-size 3x3 (or any odd k) convolution, He-normal init."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, bias: bool = True):
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = Parameter(rng.normal(0.0, std, size=(c_out, c_in, k, k)))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding=self.padding)


class MLP(Module):
    """Two linear layers with an activation in between."""

    def __init__(self, rng, d_in: int, hidden: int, d_out: int | None = None, act: str = "relu",
                 std: float | None = 0.02):
        self.fc1 = Linear(rng, d_in, hidden, std=std)
        self.fc2 = Linear(rng, hidden, d_out or d_in, std=std)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = T.gelu(h) if self.act == "gelu" else T.relu(h)
        return self.fc2(h)
