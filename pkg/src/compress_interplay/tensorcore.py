"""Value types, norms and the seeded random-generation contract.

Blocks and tensors are plain float64 numpy arrays validated on entry.
Every batched routine in this package treats the *last* axis as the block
axis, so a single block is just the 1-D case of a ``(..., n)`` stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def as_block(values, *, allow_empty: bool = False) -> np.ndarray:
    """Return ``values`` as a read-only float64 array after validation.

    Rejects NaN/Inf; rejects empty input unless ``allow_empty``.
    """
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0 and not allow_empty:
        raise ValidationError("block must contain at least one element")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("block contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def check_p(p: float) -> float:
    p = float(p)
    if not (p >= 1.0) or math.isinf(p):
        raise ValidationError(f"norm order p must lie in [1, inf), got {p}")
    return p


def lp_norm(v, p: float = 2.0, axis: int | None = None):
    """(sum |v_i|^p)^(1/p) for p in [1, inf).

    With ``axis`` given, the norm is taken along that axis of a stacked
    array and an array of norms is returned.
    """
    p = check_p(p)
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("lp_norm of an empty vector is undefined")
    a = np.abs(arr)
    if p == 1.0:
        out = a.sum(axis=axis)
    elif p == 2.0:
        out = np.sqrt(np.square(a).sum(axis=axis))
    else:
        # rescale by the max to keep a**p away from overflow/underflow
        top = a.max(axis=axis, keepdims=True)
        safe = np.where(top > 0, top, 1.0)
        out = np.squeeze(safe, axis=axis) * ((a / safe) ** p).sum(axis=axis) ** (1.0 / p)
    if axis is None:
        return float(out)
    return out


@dataclass(frozen=True)
class SeedSpec:
    """A (seed, stream_index) pair naming one independent random stream."""

    seed: int = 0
    stream_index: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_index"):
            val = getattr(self, name)
            if not (0 <= int(val) < 2**64):
                raise ValidationError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "SeedSpec":
        """Derive a sub-stream; distinct indices give distinct streams."""
        # fold the parent stream into the seed so children of different
        # parents never coincide
        mixed = np.random.SeedSequence(
            int(self.seed), spawn_key=(int(self.stream_index), int(index))
        ).generate_state(2, dtype=np.uint32)
        return SeedSpec(int(mixed[0]) << 32 | int(mixed[1]), int(index))


def gaussian_block(n: int, seed: SeedSpec | None = None) -> np.ndarray:
    """n i.i.d. standard-normal samples drawn from ``seed``'s stream."""
    if int(n) < 1:
        raise ValidationError("block length must be >= 1")
    seed = seed or SeedSpec()
    out = seed.generator().standard_normal(int(n))
    out.setflags(write=False)
    return out


def gaussian_blocks(count: int, n: int, seed: SeedSpec | None = None) -> np.ndarray:
    """``(count, n)`` standard-normal stack from one stream."""
    if int(count) < 1 or int(n) < 1:
        raise ValidationError("count and n must be >= 1")
    seed = seed or SeedSpec()
    return seed.generator().standard_normal((int(count), int(n)))


@dataclass(frozen=True)
class Tensor:
    """Row-major real tensor partitioned into fixed-length blocks.

    ``allow_short_tail`` permits a final block shorter than ``block_size``;
    by default the flattened length must divide evenly.
    """

    shape: tuple[int, ...]
    data: np.ndarray = field(repr=False)
    block_size: int = 64
    allow_short_tail: bool = False

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise ValidationError(f"shape must be non-empty positive integers, got {shape}")
        data = as_block(np.asarray(self.data, dtype=np.float64).reshape(-1))
        if data.size != math.prod(shape):
            raise ValidationError(
                f"data length {data.size} does not match shape {shape}"
            )
        if self.block_size < 1:
            raise ValidationError("block_size must be positive")
        if data.size % self.block_size and not self.allow_short_tail:
            raise ValidationError(
                f"length {data.size} is not divisible by block_size {self.block_size}"
            )
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr, block_size: int = 64, **kw) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr.reshape(-1), block_size, **kw)

    @property
    def size(self) -> int:
        return self.data.size

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @property
    def num_blocks(self) -> int:
        return -(-self.size // self.block_size)

    def block_matrix(self) -> np.ndarray:
        """``(num_blocks, block_size)`` view; only for evenly divisible data."""
        if self.size % self.block_size:
            raise ValidationError("tensor has a short tail block")
        return self.data.reshape(-1, self.block_size)

    def blocks(self) -> Iterator[np.ndarray]:
        for start in range(0, self.size, self.block_size):
            yield self.data[start : start + self.block_size]


def stack_blocks(blocks: Sequence) -> np.ndarray:
    return np.stack([as_block(b) for b in blocks])
