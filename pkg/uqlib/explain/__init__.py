from uqlib.explain.lime import (
    FillMode,
    LimeConfig,
    LimeExplanation,
    LimeStability,
    RidgeFit,
    kernel_weights,
    fill_values,
    lime_explain,
    lime_repeat,
    perturb,
    sample_masks,
    weighted_ridge,
)
from uqlib.explain.saliency import (
    ExplanationUncertainty,
    SaliencyStack,
    aggregate_explanations,
    reliability_weighted_map,
)
from uqlib.explain.segmentation import SegmentationMap, grid_superpixels

__all__ = [
    "FillMode",
    "LimeConfig",
    "LimeExplanation",
    "LimeStability",
    "RidgeFit",
    "kernel_weights",
    "fill_values",
    "lime_explain",
    "lime_repeat",
    "perturb",
    "sample_masks",
    "weighted_ridge",
    "ExplanationUncertainty",
    "SaliencyStack",
    "aggregate_explanations",
    "reliability_weighted_map",
    "SegmentationMap",
    "grid_superpixels",
]
