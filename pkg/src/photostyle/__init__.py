"""Photorealistic style transfer.

Minimizes a combined objective over an output image: feature-space
content distance, segmentation-augmented Gram style distance, and a
Matting-Laplacian photorealism penalty, with analytic gradients and a
two-stage optimization schedule.
"""

from .baselines import reinhard_transfer
from .config import RunConfig, load_config, validate_config
from .features import (
    ExtractorSpec,
    FeatureMap,
    LayerSpec,
    LayerWeights,
    extract_features,
    extract_features_with_vjp,
    load_feature_file,
    patch_correspondence,
    write_feature_file,
)
from .image import flatten_channel, load_png, save_png, unflatten_channel
from .losses import (
    LossBreakdown,
    ObjectiveConfig,
    augmented_style_loss,
    build_objective_state,
    content_loss,
    gram,
    style_loss,
    total_loss,
)
from .matting import (
    MattingParams,
    SparseSym,
    build_matting_laplacian,
    dense_oracle_laplacian,
    matting_gradient,
    matting_penalty,
)
from .optimize import (
    OptimizerParams,
    StageResult,
    TwoStageResult,
    lambda_sweep,
    minimize,
    two_stage_transfer,
)
from .pipeline import run_transfer
from .segmentation import (
    LabelMaskStack,
    MergeTable,
    build_mask_stack,
    downsample_mask,
    merge_labels,
    remap_orphans,
)

__version__ = "0.1.0"

__all__ = [
    "ExtractorSpec",
    "FeatureMap",
    "LabelMaskStack",
    "LayerSpec",
    "LayerWeights",
    "LossBreakdown",
    "MattingParams",
    "MergeTable",
    "ObjectiveConfig",
    "OptimizerParams",
    "RunConfig",
    "SparseSym",
    "StageResult",
    "TwoStageResult",
    "augmented_style_loss",
    "build_mask_stack",
    "build_matting_laplacian",
    "build_objective_state",
    "content_loss",
    "dense_oracle_laplacian",
    "downsample_mask",
    "extract_features",
    "extract_features_with_vjp",
    "flatten_channel",
    "gram",
    "lambda_sweep",
    "load_config",
    "load_feature_file",
    "load_png",
    "matting_gradient",
    "matting_penalty",
    "merge_labels",
    "minimize",
    "patch_correspondence",
    "reinhard_transfer",
    "remap_orphans",
    "run_transfer",
    "save_png",
    "style_loss",
    "total_loss",
    "two_stage_transfer",
    "unflatten_channel",
    "validate_config",
    "write_feature_file",
]
