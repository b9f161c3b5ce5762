"""Stereo video retargeting: saliency-driven column warping with transformer and parallax-attention training."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .data import StereoClip, StereoDataset, SyntheticScene, load_dataset, synthetic_clip
from .metrics import MetricsReport, bds, ddr, feature_distance
from .saliency import Box, DisparityMap, dilate, fuse
from .shiftwarp import ColumnMapping, ShiftMap, ShiftParams, build_mapping, inverse_warp, shift_map, warp
from .tensor import ContractError, DimensionError, NumericError, Parameter, Tape, Tensor

__all__ = [
    "Box", "ColumnMapping", "ContractError", "DimensionError", "DisparityMap", "MetricsReport",
    "NumericError", "Parameter", "RunConfig", "ShiftMap", "ShiftParams", "StereoClip", "StereoDataset",
    "SyntheticScene", "Tape", "Tensor", "bds", "build_mapping", "ddr", "dilate", "feature_distance", "fuse",
    "inverse_warp", "load_config", "load_dataset", "shift_map", "synthetic_clip", "warp",
]
