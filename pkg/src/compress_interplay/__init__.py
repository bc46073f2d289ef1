"""Block quantization, magnitude sparsity, and audits of how they compose."""

__version__ = "0.1.0"

from .tensorcore import SeedSpec, Tensor, ValidationError, gaussian_block, lp_norm  # noqa: E402
from .quantize import (  # noqa: E402
    ExponentMode,
    Family,
    MXFPConfig,
    PRESETS,
    QuantFormat,
    block_scale,
    get_preset,
    quant_error,
    quantize_block,
    step_bound,
)
from .sparsify import SparsityPattern, TieMode, parse_pattern, sparsify, sparsity_error  # noqa: E402
from .compose import CompositionResult, Order, compose, compose_tensor, correction_vector  # noqa: E402
from .audit import (  # noqa: E402
    audit_dot,
    audit_tensor,
    collision_report,
    deviation_experiment,
    orthogonality_threshold,
)
from .propagate import StackConfig, simulate_stack  # noqa: E402
