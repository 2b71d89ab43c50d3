"""8-bit optimizer states via block-wise dynamic quantization."""

__version__ = "0.1.0"

from .codebooks import (
    BUILTIN_IDS,
    Codebook,
    CodebookKind,
    build_dynamic_tree_signed,
    build_dynamic_unsigned,
    build_inverse_dynamic,
    build_linear,
    build_quantile,
    get_codebook,
    normal_quantile_codebook,
)
from .optim import (
    Optimizer,
    OptimizerConfig,
    OptimizerKind,
    QuantizedOptimizerState,
    State32,
    memory_footprint,
    step_8bit,
    step_32,
)
from .quant import (
    DEFAULT_BLOCK_SIZE,
    BlockQuantizedTensor,
    TensorQuantized,
    dequantize_blockwise,
    dequantize_tensor,
    nearest_code,
    quantize_blockwise,
    quantize_tensor,
)
from .quantile_est import InsufficientDataError, StreamingQuantileEstimator, exact_quantiles
