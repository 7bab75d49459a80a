"""Crack segmentation with self-prompted mask refinement."""

from .backends import (
    GroundTruthBoxDetector,
    ImageEmbedding,
    NeuralBoxDetector,
    NeuralSegmentationBackend,
    SegmentationBackend,
    SyntheticOracleBackend,
    SyntheticOracleSpec,
)
from .errors import BackendError, ConfigError, CrackSegError, DataError
from .imgproc import (
    BoundingBox,
    Region,
    crop,
    erode,
    expand_box,
    find_contours,
    make_elliptical_kernel,
    mask_difference,
    mask_intersection,
    overlay,
    resize,
)
from .losses import dice_focal_loss, dice_loss, focal_loss
from .lowrank import ConvLoRAAdapter, adapter_forward, init_adapter, merge
from .metrics import FpsMeter, MetricReport, evaluate_mask
from .pipeline import PipelineConfig, bench, evaluate, index_dataset, run_single
from .prompts import PointPrompt, extract_region_points, find_centers, select_prompts
from .refine import RefinementConfig, RefinementOutcome, refine

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BoundingBox",
    "ConfigError",
    "ConvLoRAAdapter",
    "CrackSegError",
    "DataError",
    "FpsMeter",
    "GroundTruthBoxDetector",
    "ImageEmbedding",
    "MetricReport",
    "NeuralBoxDetector",
    "NeuralSegmentationBackend",
    "PipelineConfig",
    "PointPrompt",
    "RefinementConfig",
    "RefinementOutcome",
    "Region",
    "SegmentationBackend",
    "SyntheticOracleBackend",
    "SyntheticOracleSpec",
    "adapter_forward",
    "bench",
    "crop",
    "dice_focal_loss",
    "dice_loss",
    "erode",
    "evaluate",
    "evaluate_mask",
    "expand_box",
    "find_centers",
    "find_contours",
    "focal_loss",
    "index_dataset",
    "init_adapter",
    "make_elliptical_kernel",
    "mask_difference",
    "mask_intersection",
    "merge",
    "overlay",
    "refine",
    "resize",
    "run_single",
    "select_prompts",
    "extract_region_points",
]
