"""Iterative weakly-supervised segmentation by mining common object features."""

__version__ = "0.1.0"

from .rasters import (  # noqa: F401
    IGNORE,
    DatasetManifest,
    ImageRaster,
    LabelRaster,
    ScalarRaster,
    load_manifest,
    load_png,
    load_scalar_raster,
    save_png,
)
from .superpixel import FhParams, SuperpixelMap, segment  # noqa: F401
