"""Multi-task cascaded volumetric tumour segmentation with cross-task guided attention.

A numpy autograd engine drives a shared 3D encoder-decoder with three task
heads (complete tumour, core, enhancing). Training, overlap-tile inference,
post-processing, metrics and a phantom generator are included.
"""
from .errors import (
    DegenerateGuidanceError,
    EmptyDatasetError,
    FormatError,
    NumericalError,
    OMNetError,
    ShapeError,
    UndefinedMetricError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateGuidanceError",
    "EmptyDatasetError",
    "FormatError",
    "NumericalError",
    "OMNetError",
    "ShapeError",
    "UndefinedMetricError",
    "__version__",
]
