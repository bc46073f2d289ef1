"""Magnitude-based N:M and unstructured pruning with exact-N selection.

Exactly N elements survive per group, even when magnitudes tie at the
threshold.  Ties are broken by position according to ``TieMode``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .quantize import round_half_away
from .tensorcore import ValidationError


class SparsityKind(str, Enum):
    NM = "NM"
    UNSTRUCTURED = "UNSTRUCTURED"


class TieMode(str, Enum):
    KEEP_EARLIER = "KEEP_EARLIER"
    KEEP_LATER = "KEEP_LATER"


@dataclass(frozen=True)
class SparsityPattern:
    kind: SparsityKind
    n: int = 0
    m: int = 0
    percent: float = 0.0
    tie_mode: TieMode = TieMode.KEEP_EARLIER

    def __post_init__(self):
        object.__setattr__(self, "kind", SparsityKind(self.kind))
        object.__setattr__(self, "tie_mode", TieMode(self.tie_mode))
        if self.kind is SparsityKind.NM:
            if not (1 <= self.n <= self.m):
                raise ValidationError(f"N:M needs 1 <= N <= M, got {self.n}:{self.m}")
        elif not (0.0 <= self.percent <= 100.0):
            raise ValidationError(f"sparsity percent must lie in [0, 100], got {self.percent}")

    @classmethod
    def nm(cls, n: int, m: int, tie_mode=TieMode.KEEP_EARLIER) -> "SparsityPattern":
        return cls(SparsityKind.NM, n=int(n), m=int(m), tie_mode=tie_mode)

    @classmethod
    def unstructured(cls, percent: float, tie_mode=TieMode.KEEP_EARLIER) -> "SparsityPattern":
        return cls(SparsityKind.UNSTRUCTURED, percent=float(percent), tie_mode=tie_mode)

    def pruned_count(self, total: int) -> int:
        """Number of zeroed elements for an unstructured pattern over ``total`` values."""
        return int(round_half_away(np.float64(total * self.percent / 100.0)))

    def __str__(self) -> str:
        if self.kind is SparsityKind.NM:
            return f"{self.n}:{self.m}"
        return f"{self.percent:g}%"


_NM_RE = re.compile(r"^\s*(\d+)\s*:\s*(\d+)\s*$")
_PCT_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*%\s*$")


def parse_pattern(text: str, tie_mode=TieMode.KEEP_EARLIER) -> SparsityPattern:
    """Parse ``"N:M"`` or ``"p%"``."""
    if m := _NM_RE.match(text):
        return SparsityPattern.nm(int(m.group(1)), int(m.group(2)), tie_mode)
    if m := _PCT_RE.match(text):
        return SparsityPattern.unstructured(float(m.group(1)), tie_mode)
    raise ValidationError(f"cannot parse sparsity pattern {text!r}; use 'N:M' or 'p%'")


def _keep_top(mag: np.ndarray, n_keep: int, tie_mode: TieMode) -> np.ndarray:
    """Boolean mask keeping the ``n_keep`` largest entries along the last axis."""
    if tie_mode is TieMode.KEEP_LATER:
        return _keep_top(mag[..., ::-1], n_keep, TieMode.KEEP_EARLIER)[..., ::-1]
    keep = np.zeros(mag.shape, dtype=bool)
    if n_keep <= 0:
        return keep
    # stable sort of the negated magnitudes: equal values stay in index order
    order = np.argsort(-mag, axis=-1, kind="stable")[..., :n_keep]
    np.put_along_axis(keep, order, True, axis=-1)
    return keep


def sparsity_mask(v, pat: SparsityPattern, *, rowwise: bool = False) -> np.ndarray:
    """Keep-mask for ``v``.

    N:M groups run along the last axis.  Unstructured selection is global
    over the whole array, or over each row of the last axis when
    ``rowwise`` (each row is then its own tensor).
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0 or arr.size == 0:
        raise ValidationError("cannot sparsify an empty input")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("input contains NaN or Inf")
    mag = np.abs(arr)
    if pat.kind is SparsityKind.NM:
        length = arr.shape[-1]
        if length % pat.m:
            raise ValidationError(f"length {length} is not divisible by group size M={pat.m}")
        groups = mag.reshape(*arr.shape[:-1], length // pat.m, pat.m)
        return _keep_top(groups, pat.n, pat.tie_mode).reshape(arr.shape)
    if rowwise:
        total = arr.shape[-1]
        return _keep_top(mag, total - pat.pruned_count(total), pat.tie_mode)
    flat = mag.reshape(-1)
    return _keep_top(flat, flat.size - pat.pruned_count(flat.size), pat.tie_mode).reshape(
        arr.shape
    )


def sparsify(v, pat: SparsityPattern, *, rowwise: bool = False):
    """Zero all but the largest-magnitude elements.

    Returns:
        (pruned values, keep mask). Kept values are returned unchanged,
        pruned ones as exactly 0.0.
    """
    arr = np.asarray(v, dtype=np.float64)
    keep = sparsity_mask(arr, pat, rowwise=rowwise)
    return np.where(keep, arr, 0.0), keep


def sparsity_error(v, pat: SparsityPattern, *, rowwise: bool = False) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    keep = sparsity_mask(arr, pat, rowwise=rowwise)
    return np.where(keep, 0.0, arr)


def pruned_per_block(pat: SparsityPattern, n: int) -> int:
    """Elements zeroed in one block of length ``n`` (block treated as the tensor)."""
    if pat.kind is SparsityKind.NM:
        return (pat.m - pat.n) * (n // pat.m)
    return pat.pruned_count(n)
