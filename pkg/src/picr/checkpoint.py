"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PICR"  u32 version
    u32 n    config text (utf-8, n bytes)
    u32 t    optimizer step
    u32 k    k parameter records
    u32 j    j optimizer-moment records

    record := u16 name_len, name, u8 dtype (1 = float32), u8 rank, u32 dims[rank],
              float32 data[prod(dims)]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import Config
from .errors import CheckpointError

MAGIC = b"PICR"
VERSION = 1
_DTYPES = {1: np.dtype("<f4")}
_CODES = {np.dtype("float32"): 1}


@dataclass
class Checkpoint:
    config: Config
    params: dict[str, np.ndarray]
    step: int = 0
    moments: dict[str, np.ndarray] | None = None


def _write_record(buf: list, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    raw = name.encode("utf-8")
    buf.append(struct.pack("<H", len(raw)) + raw)
    buf.append(struct.pack("<BB", 1, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.append(arr.tobytes())


def dumps(ckpt: Checkpoint) -> bytes:
    buf = [MAGIC, struct.pack("<I", VERSION)]
    text = ckpt.config.dumps().encode("utf-8")
    moments = ckpt.moments or {}
    buf.append(struct.pack("<I", len(text)) + text)
    buf.append(struct.pack("<III", ckpt.step, len(ckpt.params), len(moments)))
    for name, arr in ckpt.params.items():
        _write_record(buf, name, arr)
    for name, arr in moments.items():
        _write_record(buf, name, arr)
    return b"".join(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("<H")
        name = self.take(n).decode("utf-8")
        code, rank = self.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"record {name!r} has unknown dtype code {code}")
        dims = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(self.take(count * 4), dtype=_DTYPES[code]).reshape(dims)
        return name, arr.astype(np.float32)


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a PICR checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    cfg = config_mod.loads(r.take(n).decode("utf-8"))
    step, k, j = r.unpack("<III")
    params = dict(r.record() for _ in range(k))
    moments = dict(r.record() for _ in range(j))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(cfg, params, step, moments or None)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())


def from_model(model, optimizer=None) -> Checkpoint:
    params = {n: p.data for n, p in model.named_parameters()}
    if optimizer is None:
        return Checkpoint(model.cfg, params)
    return Checkpoint(model.cfg, params, optimizer.t, optimizer.state())


def _architecture(cfg: Config) -> dict:
    return {"model": cfg.section("model"), "ablation": cfg.section("ablation")}


def apply_to_model(ckpt: Checkpoint, model, optimizer=None) -> None:
    """Copy weights into ``model``; refuses (changing nothing) on any mismatch."""
    if _architecture(ckpt.config) != _architecture(model.cfg):
        diff = [k for k, v in ckpt.config.to_dict().items()
                if not k.startswith(("optim.", "seed")) and model.cfg.to_dict().get(k) != v]
        raise CheckpointError(f"checkpoint config does not match the model: {', '.join(diff)}")
    named = dict(model.named_parameters())
    if set(named) != set(ckpt.params):
        missing = sorted(set(named) ^ set(ckpt.params))
        raise CheckpointError(f"parameter sets differ: {missing[:5]}")
    for name, p in named.items():
        if ckpt.params[name].shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {ckpt.params[name].shape} vs model {p.shape}")
    if optimizer is not None and ckpt.moments is not None:
        want = set(optimizer.state())
        if want != set(ckpt.moments):
            raise CheckpointError("optimizer moment names do not match the model")
    for name, p in named.items():
        p.data = ckpt.params[name].astype(p.dtype).copy()
    if optimizer is not None and ckpt.moments is not None:
        optimizer.load_state(ckpt.step, ckpt.moments)
