"""Initial object seeds: from per-class heatmaps or from a previous mask.

Seeds assign each superpixel region a class id, background (0) or UNLABELED.
UNLABELED regions are excluded from region-classifier training.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MissingHeatmap, ValidationError
from .rasters import IGNORE, LabelRaster
from .superpixel import SuperpixelMap, average_raster_per_region

UNLABELED = -1

SOURCE_INITIAL = "initial"
SOURCE_FROM_MASK = "from_mask"


@dataclass(frozen=True)
class SeedParams:
    tau_fg: float = 0.7
    tau_bg: float = 0.3
    # When True, the foreground threshold for class c is
    # tau_fg * max_r h_c[r]; when False it is the absolute value tau_fg.
    relative_fg: bool = True

    def __post_init__(self):
        if not (0 < self.tau_fg < 1) or not (0 < self.tau_bg < 1):
            raise ValidationError(f"thresholds must lie in (0,1): {self}")
        if not self.relative_fg and self.tau_bg >= self.tau_fg:
            raise ValidationError("tau_bg must be below tau_fg")


@dataclass(frozen=True)
class RegionSeedSet:
    labels: np.ndarray  # int per region: UNLABELED, 0 (bg) or class id
    source: str

    @property
    def region_count(self):
        return len(self.labels)


def extract_seeds(sp: SuperpixelMap, heatmaps: dict, params: SeedParams = SeedParams(),
                  image_labels=None) -> RegionSeedSet:
    """Seed regions from per-class heatmaps.

    A region is a candidate for class c when its averaged heatmap is a strict
    local maximum on the adjacency graph or exceeds the foreground threshold.
    Multi-class claims go to the highest average (ties to the lower class id);
    unclaimed regions become background when every class average is at or
    below tau_bg, else UNLABELED.
    """
    if not heatmaps:
        raise MissingHeatmap("no heatmaps provided")
    if image_labels is not None and set(heatmaps) != set(image_labels):
        raise MissingHeatmap(
            f"heatmap classes {sorted(heatmaps)} != image labels {sorted(image_labels)}"
        )
    classes = sorted(heatmaps)
    n = sp.region_count
    avgs = np.zeros((len(classes), n), dtype=np.float64)
    for i, c in enumerate(classes):
        avgs[i] = average_raster_per_region(sp, heatmaps[c])

    candidate = np.zeros((len(classes), n), dtype=bool)
    for i, c in enumerate(classes):
        h = avgs[i]
        thresh = params.tau_fg * h.max() if params.relative_fg else params.tau_fg
        for r in range(n):
            nbrs = sp.neighbors(r)
            local_max = bool(nbrs.size == 0 or np.all(h[r] > h[nbrs]))
            candidate[i, r] = local_max or h[r] >= thresh

    labels = np.full(n, UNLABELED, dtype=np.int64)
    for r in range(n):
        claims = np.nonzero(candidate[:, r])[0]
        if claims.size:
            best = claims[np.argmax(avgs[claims, r])]  # argmax ties -> lower id
            labels[r] = classes[best]
        elif avgs[:, r].max() <= params.tau_bg:
            labels[r] = 0
    return RegionSeedSet(labels=labels, source=SOURCE_INITIAL)


def seeds_from_mask(sp: SuperpixelMap, mask: LabelRaster) -> RegionSeedSet:
    """Label each region with the majority pixel class of a mask.

    IGNORE pixels are excluded; ties go to the lower class id; all-IGNORE
    regions become UNLABELED.
    """
    if (sp.height, sp.width) != (mask.height, mask.width):
        raise DimensionMismatch(
            f"superpixel map {sp.width}x{sp.height} vs mask "
            f"{mask.width}x{mask.height}"
        )
    flat = mask.data.ravel()
    labels = np.full(sp.region_count, UNLABELED, dtype=np.int64)
    for r, pix in enumerate(sp.region_pixels):
        vals = flat[pix]
        vals = vals[vals != IGNORE]
        if vals.size:
            labels[r] = int(np.bincount(vals).argmax())
    return RegionSeedSet(labels=labels, source=SOURCE_FROM_MASK)


def render_region_labels(sp: SuperpixelMap, labels, unlabeled_as=IGNORE) -> LabelRaster:
    """Paint per-region labels back onto the pixel grid."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != sp.region_count:
        raise DimensionMismatch(
            f"{len(labels)} labels for {sp.region_count} regions"
        )
    out = labels[sp.region_id]
    out = np.where(out == UNLABELED, unlabeled_as, out)
    return LabelRaster(out.astype(np.uint8))
