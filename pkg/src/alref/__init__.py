"""Active label refinement experiments for semantic segmentation at desk scale.

Starting from a fully (but coarsely) labelled image pool, the framework runs
active-learning cycles that pick rectangular image areas for expert label
refinement, using random, coverage, or uncertainty sampling, and records
accuracy / acquisition-rate curves across a repeated leave-one-out harness.
"""

__version__ = "0.1.0"

from .raster import AcquisitionMask, LabelRaster, MultiBandRaster, Region

__all__ = [
    "AcquisitionMask",
    "LabelRaster",
    "MultiBandRaster",
    "Region",
    "__version__",
]
