from .attention import (
    WindowFusionAttention,
    compute_shift_mask,
    relative_position_index,
    window_partition,
    window_reverse,
)
from .blocks import (
    EmbeddingStack,
    Mlp,
    MultimodalFusionBlock,
    PatchMerging,
    ShiftWindowBlock,
    WindowFusionBlock,
)
from .decoder import CalibrationBlock, ExpandHead, ModResidualBlock, SqueezeExcitation
from .network import PTNet, count_parameters
from .shapes import (
    DecoderPlan,
    ShapePlan,
    StagePlan,
    effective_merge,
    effective_shift,
    effective_window,
    embed_output_shape,
    plan_shapes,
)

__all__ = [
    "CalibrationBlock",
    "DecoderPlan",
    "EmbeddingStack",
    "ExpandHead",
    "Mlp",
    "ModResidualBlock",
    "MultimodalFusionBlock",
    "PTNet",
    "PatchMerging",
    "ShapePlan",
    "ShiftWindowBlock",
    "SqueezeExcitation",
    "StagePlan",
    "WindowFusionAttention",
    "WindowFusionBlock",
    "compute_shift_mask",
    "count_parameters",
    "effective_merge",
    "effective_shift",
    "effective_window",
    "embed_output_shape",
    "plan_shapes",
    "relative_position_index",
    "window_partition",
    "window_reverse",
]
