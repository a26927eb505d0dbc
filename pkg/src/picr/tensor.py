"""Dense tensors with a reverse-mode autodiff tape.

Every op takes and returns :class:`Tensor`. When gradient recording is on and
at least one operand requires a gradient, the result keeps references to its
parents and a closure mapping the output gradient to input gradients. Calling
:func:`backward` on a scalar walks those records in reverse topological order.

Arrays are stored as numpy ``float32`` by default. Ops never change the dtype
of their inputs, so a model cast to ``float64`` runs entirely in double
precision (used by the gradient checker).
"""
from __future__ import annotations

import contextlib
import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ShapeError, TapeError

__all__ = [
    "Tensor", "tensor", "backward", "build_tape", "no_grad", "is_grad_enabled",
    "FlopCounter", "count_flops",
    "add", "sub", "mul", "div", "neg", "matmul", "linear", "exp", "log", "clip",
    "relu", "sigmoid", "gelu", "softmax", "layernorm", "sum", "mean",
    "reshape", "transpose", "expand", "concat", "stack", "pad", "roll",
    "conv2d", "maxpool2x", "avgpool_global", "upsample_nearest", "upsample2x_nearest",
    "resize_bilinear", "bilinear_matrix", "square",
]

_ids = itertools.count()


class _Mode(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.flops: FlopCounter | None = None
        self.branches: BranchLog | None = None
        self.replay = None


_mode = _Mode()


def is_grad_enabled() -> bool:
    return _mode.grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


class FlopCounter:
    """Accumulates approximate floating point operation counts per op name."""

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


@contextlib.contextmanager
def count_flops():
    prev = _mode.flops
    counter = FlopCounter()
    _mode.flops = counter
    try:
        yield counter
    finally:
        _mode.flops = prev


class BranchLog:
    """Branch patterns seen inside ``record_branches``; ``crossed`` counts replayed ops whose natural branch differed."""

    def __init__(self):
        self.patterns: list[np.ndarray] = []
        self.crossed = 0


@contextlib.contextmanager
def record_branches(replay: list[np.ndarray] | None = None):
    """Record, or with ``replay`` force, the branch taken by every piecewise op in the block.

    Piecewise ops are relu (sign), clip (below / inside / above) and max-pool
    (winner). Replaying a recorded list evaluates the smooth piece that was
    active at the recording point, extended past its boundary, which is the
    function whose derivative the tape computes.
    """
    prev = _mode.branches, _mode.replay
    log = BranchLog()
    _mode.branches = log
    _mode.replay = iter(replay) if replay is not None else None
    try:
        yield log
    finally:
        _mode.branches, _mode.replay = prev


def _branch(pattern: np.ndarray) -> np.ndarray:
    log = _mode.branches
    if _mode.replay is not None:
        forced = next(_mode.replay, None)
        if forced is None or forced.shape != pattern.shape:
            raise TapeError("replayed branch pattern does not match this evaluation")
        if log is not None and not np.array_equal(forced, pattern):
            log.crossed += 1
        pattern = forced
    if log is not None:
        log.patterns.append(pattern)
    return pattern


def _flops(op: str, n) -> None:
    if _mode.flops is not None:
        _mode.flops.add(op, n)


class Tensor:
    """N-dimensional float array that can take part in automatic differentiation."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    # -- method forms --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or np.float32))


def _result(data: np.ndarray, parents: tuple, grad_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
        out.node = next(_ids)
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# tape traversal
# ----------------------------------------------------------------------
def build_tape(root: Tensor) -> list[Tensor]:
    """Return every recorded tensor reachable from ``root``, parents first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise TapeError("backward called on a tensor that is not on the tape")
    if grad is None:
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    grads: dict[int, np.ndarray] = {id(loss): grad}
    for t in reversed(build_tape(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data
    _flops("add", out.size)
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data
    _flops("sub", out.size)
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data * b.data
    _flops("mul", out.size)

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data / b.data
    _flops("div", out.size)

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _flops("exp", out.size)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    _flops("log", out.size)
    return _result(out, (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    side = _branch(np.where(a.data < lo, -1, np.where(a.data > hi, 1, 0)).astype(np.int8))
    inside = side == 0
    out = np.where(inside, a.data, np.where(side < 0, lo, hi)).astype(a.dtype, copy=False)
    return _result(out, (a,), lambda g: (g * inside,), "clip")


def relu(a: Tensor) -> Tensor:
    pos = _branch(a.data > 0)
    out = a.data * pos
    _flops("relu", out.size)
    return _result(out, (a,), lambda g: (g * pos,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    _flops("sigmoid", 4 * out.size)
    return _result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)
    _flops("gelu", 8 * out.size)

    def grad_fn(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _result(out, (a,), grad_fn, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    _flops("softmax", 5 * out.size)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), grad_fn, "softmax")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layernorm affine params {gamma.shape}/{beta.shape} do not match width {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _flops("layernorm", 8 * out.size)

    def grad_fn(g):
        dxhat = g * gamma.data
        dx = None
        if x.requires_grad:
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        dbeta = g.sum(axis=lead) if beta.requires_grad else None
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), grad_fn, "layernorm")


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)
    _flops("matmul", 2 * out.size * a.shape[-1])

    def grad_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), grad_fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is stored as (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear expects last dim {w.shape[0]}, got input {x.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[1],))


# ----------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------
def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)
    _flops("sum", a.size)
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.asarray(out), (a,), grad_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return div(sum(a, axis, keepdims), float(n))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from exc
    src = a.shape
    return _result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (no copy in forward)."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from exc
    src = a.shape
    return _result(out, (a,), lambda g: (_unbroadcast(g, src),), "expand")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(np.asarray(out), (a,), grad_fn, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, tuple(tensors), grad_fn, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    nd = tensors[0].ndim + 1
    ax = axis % nd
    parts = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(parts, axis=ax)


def pad(a: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` follows ``np.pad`` (one (before, after) pair per axis)."""
    widths = tuple(tuple(w) for w in widths)
    out = np.pad(a.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _result(out, (a,), lambda g: (g[sl],), "pad")


def roll(a: Tensor, shift, axis) -> Tensor:
    out = np.roll(a.data, shift, axis=axis)
    back = tuple(-s for s in shift) if isinstance(shift, (tuple, list)) else -shift
    return _result(out, (a,), lambda g: (np.roll(g, back, axis=axis),), "roll")


# ----------------------------------------------------------------------
# spatial ops, layout (B, C, H, W) unless noted
# ----------------------------------------------------------------------
def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")
    return x, False


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (C_in, H, W) or (B, C_in, H, W); ``w`` is (C_out, C_in, kh, kw).
    """
    x, squeeze = _as_batched(x)
    B, C, H, W = x.shape
    Co, Ci, kh, kw = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel {w.shape} expects {Ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    if (Hp - kh) % stride or (Wp - kw) % stride:
        raise ShapeError(f"conv2d: stride {stride} does not tile padded input {Hp}x{Wp} with kernel {kh}x{kw}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(Co, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2)
    _flops("conv2d", 2 * B * Ho * Wo * Co * C * kh * kw)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, Co)
        dw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        db = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    out_t = _result(np.ascontiguousarray(out), parents, grad_fn, "conv2d")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def maxpool2x(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over the last two axes (first max wins ties)."""
    *lead, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2x needs even spatial dims, got {H}x{W}")
    blocks = x.data.reshape(*lead, H // 2, 2, W // 2, 2)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3)
    flat = blocks.transpose(perm).reshape(*lead, H // 2, W // 2, 4)
    idx = _branch(flat.argmax(axis=-1))
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    _flops("maxpool", x.size)

    def grad_fn(g):
        onehot = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        inv = tuple(np.argsort(perm))
        back = onehot.reshape(*lead, H // 2, W // 2, 2, 2).transpose(inv)
        return (back.reshape(x.shape),)

    return _result(out, (x,), grad_fn, "maxpool2x")


def avgpool_global(x: Tensor) -> Tensor:
    """Adaptive average pool to 1x1 over the last two axes (keeps them as size 1)."""
    return mean(x, axis=(-2, -1), keepdims=True)


def upsample_nearest(x: Tensor, factor: int = 2, axes=(-2, -1)) -> Tensor:
    """Replicate each element ``factor`` times along each of ``axes``."""
    axes = tuple(a % x.ndim for a in axes)
    out = x.data
    for ax in axes:
        out = np.repeat(out, factor, axis=ax)
    src = x.shape

    def grad_fn(g):
        for ax in sorted(axes, reverse=True):
            shp = g.shape
            g = g.reshape(shp[:ax] + (shp[ax] // factor, factor) + shp[ax + 1:]).sum(axis=ax + 1)
        return (g.reshape(src),)

    return _result(out, (x,), grad_fn, "upsample_nearest")


def upsample2x_nearest(x: Tensor) -> Tensor:
    return upsample_nearest(x, 2, axes=(-2, -1))


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (n_out, n_in) resampling matrix with half-pixel centres.

    Upsampling uses the 2-tap linear kernel. Downsampling widens the triangle
    kernel by the scale factor so every input pixel contributes (antialiased,
    as image libraries do for bilinear reduction).
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    src = np.arange(n_in) + 0.5
    for i in range(n_out):
        centre = (i + 0.5) * scale
        wts = np.maximum(0.0, 1.0 - np.abs(src - centre) / support)
        if wts.sum() == 0:
            wts[min(int(centre), n_in - 1)] = 1.0
        if scale < 1.0:
            # clamp to the edge like align_corners=False interpolation
            c = min(max(centre - 0.5, 0.0), n_in - 1.0)
            lo = int(np.floor(c))
            hi = min(lo + 1, n_in - 1)
            frac = c - lo
            wts = np.zeros(n_in)
            wts[lo] += 1 - frac
            wts[hi] += frac
        m[i] = wts / wts.sum()
    return m.astype(dtype)


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Resize the last two axes to ``size`` with :func:`bilinear_matrix` kernels."""
    H, W = x.shape[-2:]
    Ho, Wo = size
    ry = Tensor(bilinear_matrix(H, Ho, x.dtype))
    rx = Tensor(bilinear_matrix(W, Wo, x.dtype).T.copy())
    return matmul(matmul(ry, x), rx)
