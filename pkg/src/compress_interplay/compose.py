"""Sparsity/quantization compositions and their error decomposition.

For a composition c, the error splits as

    eps_c = eps_q + eps_s + eps_correction

where eps_q and eps_s are the errors of each transform applied alone to
the original input and eps_correction is whatever is left over.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .quantize import QuantFormat, quantize_blocks
from .sparsify import SparsityPattern, sparsity_mask
from .tensorcore import Tensor, ValidationError


class Order(str, Enum):
    S_THEN_Q = "S_THEN_Q"
    Q_THEN_S = "Q_THEN_S"


_ORDER_ALIASES = {
    "s_then_q": Order.S_THEN_Q,
    "s-q": Order.S_THEN_Q,
    "sq": Order.S_THEN_Q,
    "s->q": Order.S_THEN_Q,
    "q_then_s": Order.Q_THEN_S,
    "q-s": Order.Q_THEN_S,
    "qs": Order.Q_THEN_S,
    "q->s": Order.Q_THEN_S,
}


def parse_order(text) -> Order:
    if isinstance(text, Order):
        return text
    try:
        return _ORDER_ALIASES[str(text).strip().lower()]
    except KeyError:
        raise ValidationError(
            f"unknown order {text!r}; use S_THEN_Q/s-q or Q_THEN_S/q-s"
        ) from None


@dataclass(frozen=True)
class CompositionResult:
    output: np.ndarray
    eps_composition: np.ndarray
    eps_q: np.ndarray
    eps_s: np.ndarray
    eps_correction: np.ndarray
    order: Order
    keep_s: np.ndarray
    keep_c: np.ndarray

    def identity_residual(self) -> float:
        """max |eps_c - (eps_q + eps_s + eps_correction)|; rounding-level by construction."""
        r = self.eps_composition - (self.eps_q + self.eps_s + self.eps_correction)
        return float(np.abs(r).max())


def _compose_rows(x, f, pat, order, mask_fn):
    keep_s = mask_fn(x)
    q = quantize_blocks(x, f)
    if order is Order.S_THEN_Q:
        out = quantize_blocks(np.where(keep_s, x, 0.0), f)
        keep_c = keep_s
    else:
        # sparsity sees the quantized values, so collisions from rounding
        # are resolved by tie_mode rather than by the original magnitudes
        keep_c = mask_fn(q)
        out = np.where(keep_c, q, 0.0)
    eps_q = x - q
    eps_s = np.where(keep_s, 0.0, x)
    eps_c = x - out
    return CompositionResult(
        output=out,
        eps_composition=eps_c,
        eps_q=eps_q,
        eps_s=eps_s,
        eps_correction=eps_c - eps_q - eps_s,
        order=order,
        keep_s=keep_s,
        keep_c=keep_c,
    )


def compose(v, f: QuantFormat, pat: SparsityPattern, order) -> CompositionResult:
    """Apply q(s(v)) or s(q(v)) with the last axis of ``v`` as one block.

    Leading axes are independent samples; unstructured sparsity is then
    computed per row.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValidationError("compose needs a non-empty block")
    if not np.all(np.isfinite(x)):
        raise ValidationError("block contains NaN or Inf")
    return _compose_rows(
        x, f, pat, parse_order(order), lambda a: sparsity_mask(a, pat, rowwise=True)
    )


def correction_vector(v, f: QuantFormat, pat: SparsityPattern, order) -> np.ndarray:
    return compose(v, f, pat, order).eps_correction


def compose_tensor(t: Tensor, f: QuantFormat, pat: SparsityPattern, order) -> CompositionResult:
    """Tensor-level composition.

    Quantization runs on each block of ``t.block_size`` elements; N:M groups
    run along the flattened data; unstructured sparsity picks one global
    threshold over the whole tensor (over the quantized values for
    Q_THEN_S).  Result arrays have shape ``(num_blocks, block_size)``.
    """
    blocks = t.block_matrix()

    def global_mask(a):
        return sparsity_mask(a.reshape(-1), pat).reshape(a.shape)

    return _compose_rows(blocks, f, pat, parse_order(order), global_mask)
