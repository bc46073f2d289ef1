"""Error propagation through a synthetic stack of linear layers.

A dense reference stack and a compressed copy share weights and inputs.
Compressed layers see quantized activations and composed (sparsified and
quantized) weights; all other layers run in full precision.  The trace is
the relative L2 (Frobenius over the batch) error of each layer's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .compose import Order, compose_tensor, parse_order
from .quantize import QuantFormat, quantize_tensor
from .sparsify import SparsityPattern, sparsify
from .tensorcore import SeedSpec, Tensor, ValidationError


class Activation(str, Enum):
    RELU = "RELU"
    IDENTITY = "IDENTITY"


@dataclass(frozen=True)
class StackConfig:
    depth: int = 12
    width: int = 256
    activation: Activation = Activation.IDENTITY
    weight_std: float | None = None  # default 1/sqrt(width)
    input_batch: int = 8
    format: QuantFormat | None = None
    pattern: SparsityPattern | None = None
    order: Order = Order.S_THEN_Q
    compress_layers: frozenset[int] | None = None  # None: every layer
    seed: SeedSpec = field(default_factory=SeedSpec)

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValidationError("depth and width must be >= 1")
        if self.input_batch < 1:
            raise ValidationError("input_batch must be >= 1")
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "order", parse_order(self.order))
        if self.compress_layers is not None:
            layers = frozenset(int(i) for i in self.compress_layers)
            if any(not 0 <= i < self.depth for i in layers):
                raise ValidationError(f"compress_layers must lie in [0, {self.depth})")
            object.__setattr__(self, "compress_layers", layers)
        if self.format is not None and self.width % self.format.block_size:
            raise ValidationError("width must be a multiple of the format block size")

    @property
    def layers_to_compress(self) -> frozenset[int]:
        if self.compress_layers is None:
            return frozenset(range(self.depth))
        return self.compress_layers


@dataclass(frozen=True)
class PropagationTrace:
    rel_l2_error: np.ndarray
    order: Order
    seed: SeedSpec

    def rows(self):
        for i, err in enumerate(self.rel_l2_error):
            yield i, float(err), self.order.value, self.seed.seed


def _act(y, kind):
    return np.maximum(y, 0.0) if kind is Activation.RELU else y


def compress_weight(w: np.ndarray, cfg: StackConfig) -> np.ndarray:
    """Composed weight for one layer; blocks and N:M groups run along the input dim."""
    f, pat = cfg.format, cfg.pattern
    if f is not None and pat is not None:
        t = Tensor.from_array(w, block_size=f.block_size)
        return compose_tensor(t, f, pat, cfg.order).output.reshape(w.shape)
    if f is not None:
        return quantize_tensor(w, f)
    if pat is not None:
        return sparsify(w, pat)[0]
    return w


def simulate_stack(cfg: StackConfig) -> PropagationTrace:
    d = cfg.width
    std = cfg.weight_std if cfg.weight_std is not None else 1.0 / np.sqrt(d)
    wrng = cfg.seed.child(0).generator()
    weights = [wrng.standard_normal((d, d)) * std for _ in range(cfg.depth)]
    x = cfg.seed.child(1).generator().standard_normal((cfg.input_batch, d))

    compressed = cfg.layers_to_compress
    y_ref, y_hat = x, x
    errors = np.zeros(cfg.depth)
    for i, w in enumerate(weights):
        y_ref = _act(y_ref @ w.T, cfg.activation)
        if i in compressed:
            a = quantize_tensor(y_hat, cfg.format) if cfg.format is not None else y_hat
            y_hat = _act(a @ compress_weight(w, cfg).T, cfg.activation)
        else:
            y_hat = _act(y_hat @ w.T, cfg.activation)
        ref_norm = np.linalg.norm(y_ref)
        diff = np.linalg.norm(y_hat - y_ref)
        if ref_norm > 0:
            errors[i] = diff / ref_norm
        else:
            errors[i] = 0.0 if diff == 0 else np.inf
    return PropagationTrace(errors, cfg.order, cfg.seed)
