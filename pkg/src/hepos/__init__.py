"""Efficient attention patterns, head-wise positional strides, and summarization evaluation tools."""

from .errors import (
    CapacityError,
    ContractError,
    DimensionError,
    EmptyRowError,
    HeposError,
    NumericError,
    ParameterError,
    TrainingError,
)
from .kernels import (
    CellCounter,
    HeposSpec,
    LowRankSpec,
    LshSpec,
    SinkhornSpec,
    full_attention,
    hepos_attention,
    linformer_attention,
    lsh_attention,
    masked_attention_reference,
    pattern_attention,
    sinkhorn_attention,
    windowed_attention,
)
from .ledger import ComplexityReport, ParityConfig, count_cells, parity_check
from .patterns import AttentionMask, PatternSpec, build_mask, hepos_mask
from .tensor import Tape, Tensor, backward, finite_difference_check

__version__ = "0.1.0"
