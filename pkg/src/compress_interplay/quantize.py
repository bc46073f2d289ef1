"""Max-scaled block-wise quantization for INT, HBFP, MXINT and MXFP.

All values stay float64; "quantized" means "lies on the format's grid for
the block's scale".  Every routine works on ``(..., n)`` stacks, quantizing
each row along the last axis as one block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .tensorcore import ValidationError, as_block


class Family(str, Enum):
    INT = "INT"
    HBFP = "HBFP"
    MXINT = "MXINT"
    MXFP = "MXFP"


class ExponentMode(str, Enum):
    FLOOR = "FLOOR"
    CEIL = "CEIL"


@dataclass(frozen=True)
class MXFPConfig:
    """Minifloat element type used inside an MXFP block.

    ``emax`` and ``max_normal`` default to the IEEE-like values implied by
    the bit widths (no codes reserved for Inf/NaN); E4M3 and E5M2 override
    them to match their OCP definitions.
    """

    exponent_bits: int
    mantissa_bits: int
    bias: int
    emax: int | None = None
    max_normal: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.exponent_bits < 1 or self.mantissa_bits < 1:
            raise ValidationError("MXFP element needs >= 1 exponent and mantissa bit")
        if self.emax is None:
            object.__setattr__(self, "emax", (2**self.exponent_bits - 1) - self.bias)
        if self.max_normal is None:
            object.__setattr__(
                self,
                "max_normal",
                float(np.ldexp(2.0 - 2.0 ** -self.mantissa_bits, self.emax)),
            )
        if not self.emin <= self.emax:
            raise ValidationError("bias inconsistent with exponent width")

    @property
    def emin(self) -> int:
        return 1 - self.bias


ELEMENT_TYPES = {
    "E4M3": MXFPConfig(4, 3, 7, emax=8, max_normal=448.0, name="E4M3"),
    "E5M2": MXFPConfig(5, 2, 15, emax=15, max_normal=57344.0, name="E5M2"),
    "E2M3": MXFPConfig(2, 3, 1, name="E2M3"),
    "E3M2": MXFPConfig(3, 2, 3, name="E3M2"),
    "E2M1": MXFPConfig(2, 1, 1, name="E2M1"),
}


@dataclass(frozen=True)
class QuantFormat:
    """Full description of a max-scaled block quantizer.

    ``mantissa_clamp`` bounds the integer grid index for INT/HBFP/MXINT and
    is ignored for MXFP, whose range is set by the element type.
    """

    family: Family
    m: int
    exponent_mode: ExponentMode = ExponentMode.FLOOR
    mantissa_clamp: tuple[int, int] | None = None
    mxfp_config: MXFPConfig | None = None
    block_size: int = 64

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "exponent_mode", ExponentMode(self.exponent_mode))
        if self.block_size < 1:
            raise ValidationError("block_size must be positive")
        if fam is Family.MXFP:
            if self.mxfp_config is None:
                raise ValidationError("MXFP format requires an mxfp_config")
            if self.m != self.mxfp_config.mantissa_bits:
                raise ValidationError("for MXFP, m must equal the element mantissa bits")
            return
        if self.m < 2:
            raise ValidationError(f"m must be >= 2 for {fam.value}, got {self.m}")
        clamp = self.mantissa_clamp
        if clamp is None:
            qmax = 2 ** (self.m - 1) - 1
            clamp = (-qmax, qmax)
        lo, hi = int(clamp[0]), int(clamp[1])
        if not lo < 0 < hi:
            raise ValidationError(f"mantissa_clamp must satisfy lo < 0 < hi, got {clamp}")
        object.__setattr__(self, "mantissa_clamp", (lo, hi))

    def with_block_size(self, block_size: int) -> "QuantFormat":
        return replace(self, block_size=int(block_size))


def _hbfp(m, mode, clamp):
    return QuantFormat(Family.HBFP, m, mode, (-clamp, clamp))


PRESETS: dict[str, QuantFormat] = {
    "INT8": QuantFormat(Family.INT, 8),
    "INT4": QuantFormat(Family.INT, 4),
    "MXINT8": QuantFormat(Family.MXINT, 8, ExponentMode.CEIL, (-127, 127)),
    "MXFP8": QuantFormat(Family.MXFP, 3, ExponentMode.CEIL, mxfp_config=ELEMENT_TYPES["E4M3"]),
    "MXFP6": QuantFormat(Family.MXFP, 3, ExponentMode.CEIL, mxfp_config=ELEMENT_TYPES["E2M3"]),
}
for _m in (8, 6, 4):
    PRESETS[f"HBFP{_m}-appendix"] = _hbfp(_m, ExponentMode.CEIL, 2 ** (_m - 1) - 1)
    # FLOOR exponent puts the block max in [2^(m-1), 2^m) grid steps; a clamp
    # of 2^m - 1 keeps the rounded max below 2^m so the exponent is stable
    PRESETS[f"HBFP{_m}-paper"] = _hbfp(_m, ExponentMode.FLOOR, 2**_m - 1)
    PRESETS[f"HBFP{_m}"] = PRESETS[f"HBFP{_m}-appendix"]


def get_preset(name: str, block_size: int | None = None) -> QuantFormat:
    try:
        fmt = PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown format preset {name!r}; known: {', '.join(sorted(PRESETS))}"
        ) from None
    return fmt if block_size is None else fmt.with_block_size(block_size)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (exact in float64)."""
    r = np.trunc(x)
    return r + np.copysign((np.abs(x - r) >= 0.5).astype(np.float64), x)


def _floor_log2(a: np.ndarray) -> np.ndarray:
    """floor(log2 a) for a > 0, exact; entries with a == 0 give a huge negative."""
    _, ex = np.frexp(a)
    return np.where(a > 0, ex - 1, -(2**30))


def _scale_exponent(scale: np.ndarray, mode: ExponentMode) -> np.ndarray:
    mant, ex = np.frexp(scale)
    if mode is ExponentMode.FLOOR:
        return ex - 1
    return np.where(mant == 0.5, ex - 1, ex)


def _grid_exponent(scale, f: QuantFormat):
    """Shared exponent of the block grid for the given (positive) scale.

    For the fixed-point families CEIL is taken as floor(log2 scale) + 1.
    That equals ceil(log2 scale) except at exact powers of two, where the
    extra headroom keeps a rounded block max of exactly 2^(e-1) on the same
    grid, so re-quantizing is a no-op.  MXFP keeps the true ceiling: its top
    element may round up to exactly 2^emax, and ceil maps that back to the
    same shift.
    """
    if f.exponent_mode is ExponentMode.CEIL and f.family is not Family.MXFP:
        return np.frexp(scale)[1]
    return _scale_exponent(scale, f.exponent_mode)


def block_scale(b) -> float | np.ndarray:
    """Max absolute value of a block (or of each row of a stack)."""
    arr = np.asarray(b, dtype=np.float64)
    out = np.abs(arr).max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _quantize_rows(x: np.ndarray, f: QuantFormat) -> np.ndarray:
    scale = np.abs(x).max(axis=-1, keepdims=True)
    nonzero = scale > 0
    safe = np.where(nonzero, scale, 1.0)

    if f.family is Family.INT:
        qmax = 2 ** (f.m - 1) - 1
        lo, hi = f.mantissa_clamp
        k = np.clip(round_half_away(x * qmax / safe), lo, hi)
        # scale * (k / qmax) reproduces the block max exactly when |k| == qmax
        q = safe * (k / qmax)
    elif f.family in (Family.HBFP, Family.MXINT):
        lo, hi = f.mantissa_clamp
        e = _grid_exponent(safe, f)
        s = np.ldexp(1.0, e - (f.m - 1))
        q = np.clip(round_half_away(x / s), lo, hi) * s
    else:
        cfg = f.mxfp_config
        shift = _grid_exponent(safe, f) - cfg.emax
        a = np.ldexp(np.abs(x), -shift)
        E = np.maximum(_floor_log2(a), cfg.emin)
        ulp = np.ldexp(1.0, E - cfg.mantissa_bits)
        qa = np.minimum(round_half_away(a / ulp) * ulp, cfg.max_normal)
        q = np.copysign(np.ldexp(qa, shift), x)

    # +0.0 folds any -0.0 produced by rounding small negatives
    return np.where(nonzero, q, 0.0) + 0.0


def quantize_blocks(x, f: QuantFormat) -> np.ndarray:
    """Quantize every row of an ``(..., n)`` stack as an independent block."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise ValidationError("quantize needs at least one element per block")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("block contains NaN or Inf")
    return _quantize_rows(arr, f)


def quantize_block(b, f: QuantFormat) -> np.ndarray:
    """Quantize a single block with scale = max |b_i|.

    The format's ``block_size`` is not consulted here; the whole input is
    one block. Use :func:`quantize_tensor` to partition a longer vector.
    """
    return quantize_blocks(as_block(b), f)


def quant_error(b, f: QuantFormat) -> np.ndarray:
    arr = as_block(b) if np.ndim(b) <= 1 else np.asarray(b, dtype=np.float64)
    return arr - quantize_blocks(arr, f)


def quantize_tensor(v, f: QuantFormat) -> np.ndarray:
    """Quantize a flat or shaped array in consecutive blocks of ``f.block_size``.

    The flattened length must be a multiple of the block size.
    """
    arr = np.asarray(v, dtype=np.float64)
    flat = arr.reshape(-1)
    if flat.size % f.block_size:
        raise ValidationError(
            f"length {flat.size} is not divisible by block_size {f.block_size}"
        )
    return quantize_blocks(flat.reshape(-1, f.block_size), f).reshape(arr.shape)


def step_bound(f: QuantFormat, scale) -> float | np.ndarray:
    """Largest per-element error magnitude possible for blocks with this scale.

    Round-to-nearest contributes half a grid step; when the clamp range (or
    the MXFP element's largest finite value) sits below the scale, elements
    near the max are saturated and the saturation gap can dominate.
    """
    sc = np.asarray(scale, dtype=np.float64)
    if np.any(sc < 0) or not np.all(np.isfinite(sc)):
        raise ValidationError("scale must be finite and non-negative")
    safe = np.where(sc > 0, sc, 1.0)

    if f.family is Family.MXFP:
        cfg = f.mxfp_config
        shift = _grid_exponent(safe, f) - cfg.emax
        top = np.ldexp(safe, -shift)
        E = np.minimum(np.maximum(_floor_log2(top), cfg.emin), cfg.emax)
        half_ulp = np.ldexp(1.0, E - cfg.mantissa_bits - 1)
        bound = np.ldexp(np.maximum(half_ulp, top - cfg.max_normal), shift)
    else:
        lo, hi = f.mantissa_clamp
        reach = min(-lo, hi)
        if f.family is Family.INT:
            s = safe / (2 ** (f.m - 1) - 1)
        else:
            s = np.ldexp(1.0, _grid_exponent(safe, f) - (f.m - 1))
        bound = np.maximum(s / 2, safe - reach * s)

    bound = np.where(sc > 0, bound, 0.0)
    return float(bound) if bound.ndim == 0 else bound


def on_grid(b, f: QuantFormat, scale: float | None = None) -> np.ndarray:
    """Independent grid-membership test: is each element a grid point at ``scale``?

    Enumerates the grid explicitly instead of rounding, so it can serve as
    an oracle for :func:`quantize_block`.
    """
    arr = np.asarray(b, dtype=np.float64)
    sc = float(np.abs(arr).max()) if scale is None else float(scale)
    if sc == 0:
        return arr == 0
    return np.isin(arr, enumerate_grid(f, sc))


def enumerate_grid(f: QuantFormat, scale: float) -> np.ndarray:
    """All representable values for a block of the given (positive) scale."""
    if f.family is Family.INT:
        qmax = 2 ** (f.m - 1) - 1
        lo, hi = f.mantissa_clamp
        return scale * (np.arange(lo, hi + 1) / qmax)
    if f.family in (Family.HBFP, Family.MXINT):
        lo, hi = f.mantissa_clamp
        e = int(_grid_exponent(np.float64(scale), f))
        return np.arange(lo, hi + 1) * 2.0 ** (e - (f.m - 1))
    cfg = f.mxfp_config
    shift = int(_grid_exponent(np.float64(scale), f)) - cfg.emax
    mags = [0.0]
    for E in range(cfg.emin, cfg.emax + 1):
        for k in range(2**cfg.mantissa_bits):
            mags.append(2.0**E * (1.0 + k / 2**cfg.mantissa_bits))
    # subnormals: spacing 2^(emin - M) below 2^emin
    mags += [k * 2.0 ** (cfg.emin - cfg.mantissa_bits) for k in range(1, 2**cfg.mantissa_bits)]
    mags = np.array(sorted(set(mags)))
    mags = mags[mags <= cfg.max_normal]
    vals = np.ldexp(mags, shift)
    return np.concatenate([-vals[::-1], vals])
