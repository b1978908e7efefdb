"""ssfx: per-category layout statistics from segmentation masks, with small
from-scratch classifier heads and a two-step fusion trainer."""

__version__ = "0.1.0"

from .mask import SegmentationMask, ValidationError
from .features import (
    COLUMNS,
    FeatureSubset,
    SsfMatrix,
    extract_ssf,
    select_subset,
)

__all__ = [
    "__version__",
    "SegmentationMask",
    "ValidationError",
    "COLUMNS",
    "FeatureSubset",
    "SsfMatrix",
    "extract_ssf",
    "select_subset",
]
