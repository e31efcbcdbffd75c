"""Anatomy-aware multimodal 3D segmentation: synthetic data, a window-fusion
transformer encoder-decoder, center-distance losses, surface metrics, and a
deterministic training/inference harness."""

from .config import EMBED_STRIDE, LOSS_VARIANTS, ModelConfig, TrainConfig
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    apply_to_model,
    load_checkpoint,
    load_model,
    save_checkpoint,
)
from .estimator import PTNetSegmenter
from .gradcheck import (
    check_center_loss_gradients,
    check_model_gradients,
    run_gradcheck,
    zero_coincidence_gradient,
)
from .inference import gaussian_importance, predict_mask, sliding_window_infer, tile_origins
from .losses import (
    LossState,
    activation_center,
    anatomy_aware_loss,
    ce_loss,
    compound_loss,
    dice_loss,
    update_lambda,
)
from .metrics import (
    CaseMetrics,
    MetricsReport,
    confusion_counts,
    emit_report,
    evaluate_case,
    overlap_metrics,
    surface_distances,
    surface_mask,
    volume_cc,
    volume_group,
)
from .model import PTNet, count_parameters, plan_shapes
from .phantom import (
    MultimodalVolume,
    PhantomSpec,
    RNG_NAME,
    generate_cases,
    generate_phantom,
    make_rng,
    normalize_volume,
)
from .sampling import Patch, extract_patch, sample_batch
from .storage import (
    CaseFormatError,
    list_cases,
    load_dataset,
    load_mask_case,
    load_volume,
    save_mask_case,
    save_volume,
)
from .training import (
    TrainResult,
    TrainingAborted,
    kfold_split,
    lr_schedule,
    read_train_log,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CaseFormatError",
    "CaseMetrics",
    "Checkpoint",
    "CheckpointError",
    "EMBED_STRIDE",
    "LOSS_VARIANTS",
    "LossState",
    "MetricsReport",
    "ModelConfig",
    "MultimodalVolume",
    "PTNet",
    "PTNetSegmenter",
    "Patch",
    "PhantomSpec",
    "RNG_NAME",
    "TrainConfig",
    "TrainResult",
    "TrainingAborted",
    "activation_center",
    "anatomy_aware_loss",
    "apply_to_model",
    "ce_loss",
    "check_center_loss_gradients",
    "check_model_gradients",
    "compound_loss",
    "confusion_counts",
    "count_parameters",
    "dice_loss",
    "emit_report",
    "evaluate_case",
    "extract_patch",
    "gaussian_importance",
    "generate_cases",
    "generate_phantom",
    "kfold_split",
    "list_cases",
    "load_checkpoint",
    "load_dataset",
    "load_mask_case",
    "load_model",
    "load_volume",
    "lr_schedule",
    "make_rng",
    "normalize_volume",
    "overlap_metrics",
    "plan_shapes",
    "predict_mask",
    "read_train_log",
    "run_gradcheck",
    "sample_batch",
    "save_checkpoint",
    "save_mask_case",
    "save_volume",
    "sliding_window_infer",
    "surface_distances",
    "surface_mask",
    "tile_origins",
    "train",
    "update_lambda",
    "volume_cc",
    "volume_group",
    "zero_coincidence_gradient",
]
