"""stainform: reference-based stain normalization for hematology slide images."""

from .core import (
    ChannelStats,
    FeatureMap,
    Image,
    LuminanceMode,
    downsample,
    luminance,
    standardize,
    upsample_nearest,
)
from .correspondence import NNField, PatchMatchParams, bds_vote, patch_cost, patchmatch
from .features import (
    Enhancement,
    FeatureConfig,
    FeatureSource,
    LabelMap,
    builtin_features,
    enhance,
    kmeans_labels,
    load_fmap,
    load_label_map,
)
from .pipeline import JobConfig, gray_world, run_balance_batch, run_transfer_batch
from .transfer import (
    AbField,
    ConvergenceError,
    EnergyParams,
    GuidedFilterParams,
    apply_ab,
    guided_filter_upscale,
    solve_ab,
    transfer_single_layer,
)

__version__ = "0.1.0"

__all__ = [
    "AbField",
    "ChannelStats",
    "ConvergenceError",
    "Enhancement",
    "EnergyParams",
    "FeatureConfig",
    "FeatureMap",
    "FeatureSource",
    "GuidedFilterParams",
    "Image",
    "JobConfig",
    "LabelMap",
    "LuminanceMode",
    "NNField",
    "PatchMatchParams",
    "apply_ab",
    "bds_vote",
    "builtin_features",
    "downsample",
    "enhance",
    "gray_world",
    "guided_filter_upscale",
    "kmeans_labels",
    "load_fmap",
    "load_label_map",
    "luminance",
    "patch_cost",
    "patchmatch",
    "run_balance_batch",
    "run_transfer_batch",
    "solve_ab",
    "standardize",
    "transfer_single_layer",
    "upsample_nearest",
]
