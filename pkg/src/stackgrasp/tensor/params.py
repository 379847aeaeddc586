"""Named parameter storage, optimizers and the binary checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .core import Tensor

MAGIC = b"MSFA0001"


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered name -> Tensor map with a trainable flag per entry."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float32), requires_grad=True)
        self._tensors[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, prefix: str, flag: bool):
        for name in self._tensors:
            if name.startswith(prefix):
                self._trainable[name] = flag

    def count(self, trainable_only: bool = True) -> int:
        return int(
            sum(t.data.size for n, t in self._tensors.items() if self._trainable[n] or not trainable_only)
        )

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = np.zeros_like(t.data)

    def assign(self, name: str, value: np.ndarray):
        t = self._tensors[name]
        value = np.asarray(value)
        if value.shape != t.shape:
            raise CheckpointError(f"{name}: shape {value.shape} != {t.shape}")
        t.data = value.astype(t.data.dtype, copy=True)

    def astype(self, dtype) -> "ParamStore":
        """Detached copy in another precision (float64 shadow for oracles)."""
        out = ParamStore()
        for n, t in self._tensors.items():
            out._tensors[n] = Tensor(t.data.astype(dtype), requires_grad=True, dtype=dtype)
            out._trainable[n] = self._trainable[n]
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def save(self, path):
        Path(path).write_bytes(encode_checkpoint(self.snapshot()))

    def load(self, path, strict: bool = True):
        entries = decode_checkpoint(Path(path).read_bytes())
        if strict:
            missing = set(self._tensors) - set(entries)
            if missing:
                raise CheckpointError(f"checkpoint lacks {sorted(missing)[:5]}")
        for n, v in entries.items():
            if n in self._tensors:
                self.assign(n, v)


def encode_checkpoint(entries: dict[str, np.ndarray]) -> bytes:
    """Little-endian: magic, u32 count, then per entry name, rank, dims, float32 payload."""
    parts = [MAGIC, struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4", order="C")  # keeps rank 0, unlike ascontiguousarray
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        out = blob[pos : pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ln,) = struct.unpack("<I", take(4))
        try:
            name = take(ln).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"bad entry name: {e}") from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        entries[name] = arr
    if pos != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return entries


def sgd_step(params: ParamStore, lr: float, momentum: float = 0.0, state: Optional[dict] = None):
    """p <- p - lr * grad on trainable entries, then zero all grads."""
    for name, t in params.items():
        if params.is_trainable(name) and t.grad is not None:
            g = t.grad
            if momentum and state is not None:
                v = state.get(name)
                v = g.copy() if v is None else momentum * v + g
                state[name] = v
                g = v
            t.data = (t.data - lr * g).astype(t.data.dtype)
    params.zero_grad()


class Adam:
    """Adam with bias correction; like ``sgd_step`` it zeroes grads after stepping."""

    def __init__(self, params: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name, p in self.params.items():
            if not self.params.is_trainable(name) or p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - self.b1) * g if m is None else self.b1 * m + (1 - self.b1) * g
            v = (1 - self.b2) * g * g if v is None else self.b2 * v + (1 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
        self.params.zero_grad()


def step_lr(base_lr: float, iteration: int, decay_every: int, factor: float = 10.0) -> float:
    """Learning rate divided by ``factor`` every ``decay_every`` iterations."""
    if decay_every <= 0:
        return base_lr
    return base_lr / factor ** (iteration // decay_every)
