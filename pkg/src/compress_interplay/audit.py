"""Theorem audits over blocks, dot products, collisions and metric thresholds.

Block-level audits treat each block as the input ``x`` of the ordering
theorems.  An unstructured pattern is applied within each block, because
the bound for the Q->S order pairs swapped elements that share one
quantization grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .compose import Order, compose, parse_order
from .quantize import QuantFormat, block_scale, quantize_blocks, step_bound
from .sparsify import SparsityPattern, pruned_per_block
from .tensorcore import SeedSpec, Tensor, ValidationError, check_p, lp_norm

# absolute slack on inequality checks, for float rounding in the norms
THEOREM_TOL = 1e-9
ORDER_TOL = 1e-12
LOW_DEVIATION_CUTOFF = 1.05


@dataclass(frozen=True)
class TensorAudit:
    """Per-block norms and theorem checks.

    ``norm_s_then_q`` is the error of q(s(x)); ``norm_q_then_s`` of s(q(x)).
    All per-block fields are arrays of length ``num_blocks``.
    """

    p: float
    scale: np.ndarray
    step: np.ndarray
    norm_q: np.ndarray
    norm_s: np.ndarray
    norm_s_then_q: np.ndarray
    norm_q_then_s: np.ndarray
    reorder_bound: np.ndarray
    l1_s_then_q: np.ndarray
    l1_q_then_s: np.ndarray
    sum_bound_holds: np.ndarray
    reorder_bound_holds: np.ndarray
    l1_order_holds: np.ndarray
    correction_residual: float

    @property
    def num_blocks(self) -> int:
        return int(self.norm_q.size)

    @property
    def violations(self) -> dict[str, int]:
        return {
            "sum_bound": int((~self.sum_bound_holds).sum()),
            "reorder_bound": int((~self.reorder_bound_holds).sum()),
            "l1_order": int((~self.l1_order_holds).sum()),
        }

    def summary(self) -> dict:
        return {
            "p": self.p,
            "num_blocks": self.num_blocks,
            "violations": self.violations,
            "max_norm_q": float(self.norm_q.max()),
            "max_norm_s": float(self.norm_s.max()),
            "max_norm_s_then_q": float(self.norm_s_then_q.max()),
            "max_norm_q_then_s": float(self.norm_q_then_s.max()),
            "max_sum_bound_excess": float(
                (self.norm_s_then_q - self.norm_q - self.norm_s).max()
            ),
            "max_reorder_bound_excess": float((self.norm_q_then_s - self.reorder_bound).max()),
            "max_l1_order_excess": float((self.l1_s_then_q - self.l1_q_then_s).max()),
            "correction_residual": self.correction_residual,
        }

    CSV_HEADER = (
        "block_index",
        "scale",
        "step",
        "norm_q",
        "norm_s",
        "norm_s_then_q",
        "norm_q_then_s",
        "reorder_bound",
        "l1_s_then_q",
        "l1_q_then_s",
        "sum_bound_holds",
        "reorder_bound_holds",
        "l1_order_holds",
    )

    def rows(self):
        for i in range(self.num_blocks):
            yield (
                i,
                float(self.scale[i]),
                float(self.step[i]),
                float(self.norm_q[i]),
                float(self.norm_s[i]),
                float(self.norm_s_then_q[i]),
                float(self.norm_q_then_s[i]),
                float(self.reorder_bound[i]),
                float(self.l1_s_then_q[i]),
                float(self.l1_q_then_s[i]),
                bool(self.sum_bound_holds[i]),
                bool(self.reorder_bound_holds[i]),
                bool(self.l1_order_holds[i]),
            )


def audit_blocks(blocks, f: QuantFormat, pat: SparsityPattern, p: float = 1.0) -> TensorAudit:
    """Audit every row of a ``(B, n)`` stack as an independent block."""
    return audit_blocks_norms(blocks, f, pat, (p,))[check_p(p)]


def audit_blocks_norms(blocks, f: QuantFormat, pat: SparsityPattern, ps) -> dict[float, TensorAudit]:
    """Like :func:`audit_blocks` for several norms, sharing the compositions."""
    x = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
    sq = compose(x, f, pat, Order.S_THEN_Q)
    qs = compose(x, f, pat, Order.Q_THEN_S)
    return {check_p(p): _audit_from(x, sq, qs, f, pat, check_p(p)) for p in ps}


def _audit_from(x, sq, qs, f, pat, p) -> TensorAudit:
    n = x.shape[-1]
    norm_q = lp_norm(sq.eps_q, p, axis=-1)
    norm_s = lp_norm(sq.eps_s, p, axis=-1)
    n_sq = lp_norm(sq.eps_composition, p, axis=-1)
    n_qs = lp_norm(qs.eps_composition, p, axis=-1)

    scale = block_scale(x)
    step = step_bound(f, scale)
    # ||1(n, N, M)||_p for the pruned positions of one block
    ones_norm = pruned_per_block(pat, n) ** (1.0 / p)
    bound = norm_q + norm_s + 2.0 * step * ones_norm

    l1_sq = np.abs(sq.eps_composition).sum(axis=-1)
    l1_qs = np.abs(qs.eps_composition).sum(axis=-1)
    return TensorAudit(
        p=p,
        scale=np.atleast_1d(scale),
        step=np.atleast_1d(step),
        norm_q=norm_q,
        norm_s=norm_s,
        norm_s_then_q=n_sq,
        norm_q_then_s=n_qs,
        reorder_bound=bound,
        l1_s_then_q=l1_sq,
        l1_q_then_s=l1_qs,
        sum_bound_holds=n_sq <= norm_q + norm_s + THEOREM_TOL,
        reorder_bound_holds=n_qs <= bound + THEOREM_TOL,
        l1_order_holds=l1_sq <= l1_qs + ORDER_TOL,
        correction_residual=max(sq.identity_residual(), qs.identity_residual()),
    )


def audit_tensor(t: Tensor, f: QuantFormat, pat: SparsityPattern, p: float = 1.0) -> TensorAudit:
    """Audit each ``t.block_size`` block of a tensor."""
    return audit_blocks(t.block_matrix(), f, pat, p)


# ---------------------------------------------------------------------------
# dot-product decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DotAudit:
    eps_total: float
    eps_s_dot: float
    eps_q_dot: float
    eps_t: float
    eps_i: float
    deviation: float
    order: Order

    def identity_residual(self) -> float:
        return abs(self.eps_total - (self.eps_s_dot + self.eps_q_dot + self.eps_t - self.eps_i))

    def to_dict(self) -> dict:
        return {
            "order": self.order.value,
            "eps_total": self.eps_total,
            "eps_s_dot": self.eps_s_dot,
            "eps_q_dot": self.eps_q_dot,
            "eps_t": self.eps_t,
            "eps_i": self.eps_i,
            "deviation": None if np.isinf(self.deviation) else self.deviation,
        }


@dataclass(frozen=True)
class DotAuditBatch:
    """Column-wise DotAudit values for many (x, w) pairs."""

    eps_total: np.ndarray
    eps_s_dot: np.ndarray
    eps_q_dot: np.ndarray
    eps_t: np.ndarray
    eps_i: np.ndarray
    deviation: np.ndarray
    exact_dot: np.ndarray
    order: Order

    def __len__(self) -> int:
        return int(self.eps_total.size)

    def __getitem__(self, i: int) -> DotAudit:
        return DotAudit(
            float(self.eps_total[i]),
            float(self.eps_s_dot[i]),
            float(self.eps_q_dot[i]),
            float(self.eps_t[i]),
            float(self.eps_i[i]),
            float(self.deviation[i]),
            self.order,
        )

    def identity_residual(self) -> np.ndarray:
        return np.abs(
            self.eps_total - (self.eps_s_dot + self.eps_q_dot + self.eps_t - self.eps_i)
        )

    def term_shares(self) -> np.ndarray:
        """``(B, 4)`` absolute terms (s, q, t, i) normalized to sum to one per sample."""
        terms = np.abs(np.stack([self.eps_s_dot, self.eps_q_dot, self.eps_t, self.eps_i], -1))
        total = terms.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return terms / total


def _rowdot(a, b):
    return np.einsum("...i,...i->...", a, b)


def audit_dots(x, w, f: QuantFormat, pat: SparsityPattern, order) -> DotAuditBatch:
    """Decompose the dot-product error for each row pair of ``x`` and ``w``.

    Activations ``x`` are quantized only; weights ``w`` go through the
    composition.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape != w.shape:
        raise ValidationError(f"x and w must have equal shapes, got {x.shape} vs {w.shape}")
    order = parse_order(order)
    qx = quantize_blocks(x, f)
    comp = compose(w, f, pat, order)
    qw = w - comp.eps_q

    exact = _rowdot(x, w)
    total = exact - _rowdot(qx, comp.output)
    s_dot = _rowdot(x, comp.eps_s)
    q_dot = exact - _rowdot(qx, qw)
    eps_t = _rowdot(qx, comp.eps_correction)
    eps_i = _rowdot(x - qx, comp.eps_s)
    upper = np.abs(s_dot) + np.abs(q_dot) + np.abs(eps_t) + np.abs(eps_i)
    with np.errstate(divide="ignore", invalid="ignore"):
        deviation = np.where(total != 0, upper / np.abs(total), np.inf)
    return DotAuditBatch(total, s_dot, q_dot, eps_t, eps_i, deviation, exact, order)


def audit_dot(x, w, f: QuantFormat, pat: SparsityPattern, order) -> DotAudit:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 1 or w.ndim != 1:
        raise ValidationError("audit_dot takes two 1-D blocks; use audit_dots for stacks")
    return audit_dots(x[None], w[None], f, pat, order)[0]


# ---------------------------------------------------------------------------
# deviation experiment
# ---------------------------------------------------------------------------

DEFAULT_BIN_EDGES = tuple(float(v) for v in np.arange(1.0, 10.5, 0.5))


@dataclass
class DeviationResult:
    audits: DotAuditBatch
    bin_edges: np.ndarray
    counts: np.ndarray
    overflow: int
    undefined: int
    low_dev_count: int
    mean_shares: dict[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        dev = self.audits.deviation
        finite = dev[np.isfinite(dev)]
        return {
            "order": self.audits.order.value,
            "count": len(self.audits),
            "min_deviation": float(finite.min()) if finite.size else None,
            "max_deviation": float(finite.max()) if finite.size else None,
            "median_deviation": float(np.median(finite)) if finite.size else None,
            "fraction_below_2": float((finite < 2.0).mean()) if finite.size else None,
            "undefined": self.undefined,
            "histogram": {
                "bin_edges": [float(e) for e in self.bin_edges],
                "counts": [int(c) for c in self.counts],
                "overflow": self.overflow,
            },
            "low_deviation_cutoff": LOW_DEVIATION_CUTOFF,
            "low_deviation_count": self.low_dev_count,
            "mean_term_shares": self.mean_shares,
            "max_identity_residual": float(self.audits.identity_residual().max()),
        }


def sample_dot_pairs(count: int, n: int, seed: SeedSpec):
    """Independent N(0, 1) activation and weight blocks, fixed by ``seed``.

    The draw does not depend on the order being studied, so both orders
    see identical blocks for one seed.
    """
    if count < 1 or n < 1:
        raise ValidationError("count and n must be >= 1")
    x = seed.child(0).generator().standard_normal((count, n))
    w = seed.child(1).generator().standard_normal((count, n))
    return x, w


def deviation_experiment(
    count: int,
    n: int,
    f: QuantFormat,
    pat: SparsityPattern,
    order,
    seed: SeedSpec,
    bin_edges=DEFAULT_BIN_EDGES,
    low_cutoff: float = LOW_DEVIATION_CUTOFF,
) -> DeviationResult:
    x, w = sample_dot_pairs(count, n, seed)
    audits = audit_dots(x, w, f, pat, order)
    dev = audits.deviation
    finite = dev[np.isfinite(dev)]
    edges = np.asarray(bin_edges, dtype=np.float64)
    # the minimum deviation is 1 up to rounding; keep such samples in the first bin
    near_floor = (finite < edges[0]) & (finite >= edges[0] - 1e-9)
    counts, _ = np.histogram(np.where(near_floor, edges[0], finite), bins=edges)
    overflow = int((finite > edges[-1]).sum())

    low = np.isfinite(dev) & (dev < low_cutoff)
    shares = audits.term_shares()[low]
    names = ("eps_s_dot", "eps_q_dot", "eps_t", "eps_i")
    mean_shares = {
        k: (float(shares[:, j].mean()) if shares.shape[0] else None)
        for j, k in enumerate(names)
    }
    return DeviationResult(
        audits=audits,
        bin_edges=edges,
        counts=counts,
        overflow=overflow,
        undefined=int((~np.isfinite(dev)).sum()),
        low_dev_count=int(low.sum()),
        mean_shares=mean_shares,
    )


# ---------------------------------------------------------------------------
# collisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollisionReport:
    tensor_unique_before: int
    tensor_unique_after: int
    per_block_reduction: np.ndarray
    block_size: int

    @property
    def max_block_reduction_fraction(self) -> float:
        return float(self.per_block_reduction.max()) / self.block_size

    @property
    def fraction_blocks_reduced(self) -> float:
        return float((self.per_block_reduction >= 1).mean())

    def summary(self) -> dict:
        red = self.per_block_reduction
        return {
            "tensor_unique_before": self.tensor_unique_before,
            "tensor_unique_after": self.tensor_unique_after,
            "delta_unique": self.tensor_unique_before - self.tensor_unique_after,
            "num_blocks": int(red.size),
            "block_size": self.block_size,
            "mean_block_reduction": float(red.mean()),
            "max_block_reduction": int(red.max()),
            "max_block_reduction_fraction": self.max_block_reduction_fraction,
            "fraction_blocks_reduced": self.fraction_blocks_reduced,
        }


def _bits(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64).view(np.int64)


def _row_unique_counts(bits: np.ndarray) -> np.ndarray:
    s = np.sort(bits, axis=-1)
    return 1 + (np.diff(s, axis=-1) != 0).sum(axis=-1)


def collision_report(t: Tensor, f: QuantFormat) -> CollisionReport:
    """Unique-value counts before and after quantizing ``t`` block-wise.

    Values are compared by exact 64-bit pattern.
    """
    blocks = t.block_matrix()
    q = quantize_blocks(blocks, f)
    before, after = _bits(blocks), _bits(q)
    return CollisionReport(
        tensor_unique_before=int(np.unique(before).size),
        tensor_unique_after=int(np.unique(after).size),
        per_block_reduction=_row_unique_counts(before) - _row_unique_counts(after),
        block_size=t.block_size,
    )


# ---------------------------------------------------------------------------
# orthogonality threshold
# ---------------------------------------------------------------------------


class Direction(str, Enum):
    LOWER_IS_BETTER = "LOWER_IS_BETTER"
    HIGHER_IS_BETTER = "HIGHER_IS_BETTER"


@dataclass(frozen=True)
class ThresholdReport:
    em_base: float
    em_q: float
    em_s: float
    err_q: float
    err_s: float
    threshold: float
    direction: Direction
    em_combined: float | None = None

    @property
    def verdict(self) -> str | None:
        """BEATS if the combined metric is no worse than the threshold, else VIOLATES."""
        if self.em_combined is None:
            return None
        slack = 1e-9 * max(1.0, abs(self.threshold))
        if self.direction is Direction.LOWER_IS_BETTER:
            worse = self.em_combined > self.threshold + slack
        else:
            worse = self.em_combined < self.threshold - slack
        return "VIOLATES" if worse else "BEATS"

    def to_dict(self) -> dict:
        return {
            "em_base": self.em_base,
            "em_q": self.em_q,
            "em_s": self.em_s,
            "err_q": self.err_q,
            "err_s": self.err_s,
            "threshold": self.threshold,
            "direction": self.direction.value,
            "em_combined": self.em_combined,
            "verdict": self.verdict,
        }


def orthogonality_threshold(
    em_base: float,
    em_q: float,
    em_s: float,
    direction=Direction.LOWER_IS_BETTER,
    em_combined: float | None = None,
) -> ThresholdReport:
    vals = [em_base, em_q, em_s] + ([] if em_combined is None else [em_combined])
    if not all(np.isfinite(v) for v in vals):
        raise ValidationError("threshold inputs must be finite")
    err_q = em_q - em_base
    err_s = em_s - em_base
    return ThresholdReport(
        em_base=float(em_base),
        em_q=float(em_q),
        em_s=float(em_s),
        err_q=float(err_q),
        err_s=float(err_s),
        threshold=float(em_base + err_q + err_s),
        direction=Direction(direction),
        em_combined=None if em_combined is None else float(em_combined),
    )
