from .fpa import PyramidAttention
from .gru import BidirectionalEncoder, ConvGRUCell
from .layers import (
    BatchRenorm2d,
    ConcurrentSE,
    DropBlock2d,
    LayerNorm2d,
    Mode,
    NonFiniteError,
    renorm_limits,
)
from .model import (
    ConvBlock,
    NetConfig,
    TreeDetector,
    batch_to_tensor,
    load_checkpoint,
    param_count,
    save_checkpoint,
    stack_to_tensor,
)

__all__ = [
    "BatchRenorm2d",
    "BidirectionalEncoder",
    "ConcurrentSE",
    "ConvBlock",
    "ConvGRUCell",
    "DropBlock2d",
    "LayerNorm2d",
    "Mode",
    "NetConfig",
    "NonFiniteError",
    "PyramidAttention",
    "TreeDetector",
    "batch_to_tensor",
    "load_checkpoint",
    "param_count",
    "renorm_limits",
    "save_checkpoint",
    "stack_to_tensor",
]
