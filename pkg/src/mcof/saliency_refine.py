"""Bayesian saliency refinement: fuse a class-agnostic saliency prior with
color likelihoods estimated from the mined object regions, then binarize
with the CRF. Applied only to single-class images in the first iteration.
"""

from dataclasses import dataclass

import numpy as np

from .crf import CrfParams, binarize
from .errors import DimensionMismatch, EmptyPartition, MultiClassImage
from .rasters import IGNORE, ImageRaster, LabelRaster, ScalarRaster
from .region_model import ObjectRegionSet, image_to_lab
from .seeding import render_region_labels
from .superpixel import SuperpixelMap

SMOOTHING_FLOOR = 1e-6
DEFAULT_BINS = 8


@dataclass(frozen=True)
class LikelihoodModel:
    object_hist: np.ndarray  # (bins^3,) normalized, entries >= floor
    background_hist: np.ndarray
    bins: int = DEFAULT_BINS


@dataclass(frozen=True)
class RefinedObjectRegions:
    posterior: ScalarRaster
    labels: np.ndarray  # per-region: 0 or the refined class id


def lab_bin_indices(image: ImageRaster, bins=DEFAULT_BINS) -> np.ndarray:
    """Quantize per-pixel Lab color into a flat bins^3 index raster."""
    lab = image_to_lab(image)
    l_idx = np.clip((lab[:, :, 0] / (100.0 / bins)).astype(np.int64), 0, bins - 1)
    a_idx = np.clip(((lab[:, :, 1] + 128.0) / (256.0 / bins)).astype(np.int64), 0, bins - 1)
    b_idx = np.clip(((lab[:, :, 2] + 128.0) / (256.0 / bins)).astype(np.int64), 0, bins - 1)
    return (l_idx * bins + a_idx) * bins + b_idx


def _smooth(counts, total):
    hist = counts / max(total, 1)
    hist = np.maximum(hist, SMOOTHING_FLOOR)
    return hist / hist.sum()


def fit_likelihoods(image: ImageRaster, object_mask: LabelRaster,
                    bins=DEFAULT_BINS) -> LikelihoodModel:
    """Histogram the quantized Lab colors of object (class >= 1) and
    background (class 0) pixels; ignore pixels are excluded."""
    if (image.height, image.width) != (object_mask.height, object_mask.width):
        raise DimensionMismatch("image vs object mask")
    idx = lab_bin_indices(image, bins).ravel()
    mask = object_mask.data.ravel()
    obj = (mask >= 1) & (mask != IGNORE)
    bg = mask == 0
    n_obj, n_bg = int(obj.sum()), int(bg.sum())
    if n_obj == 0 or n_bg == 0:
        raise EmptyPartition(f"object pixels: {n_obj}, background pixels: {n_bg}")
    n_bins = bins ** 3
    obj_counts = np.bincount(idx[obj], minlength=n_bins).astype(np.float64)
    bg_counts = np.bincount(idx[bg], minlength=n_bins).astype(np.float64)
    return LikelihoodModel(
        object_hist=_smooth(obj_counts, n_obj),
        background_hist=_smooth(bg_counts, n_bg),
        bins=bins,
    )


def bayes_posterior(saliency: ScalarRaster, model: LikelihoodModel,
                    image: ImageRaster) -> ScalarRaster:
    """Per-pixel p(obj | v) = s * L_o / (s * L_o + (1 - s) * L_b)."""
    if (saliency.height, saliency.width) != (image.height, image.width):
        raise DimensionMismatch("saliency vs image")
    idx = lab_bin_indices(image, model.bins)
    l_obj = model.object_hist[idx]
    l_bg = model.background_hist[idx]
    s = saliency.data.astype(np.float64)
    num = s * l_obj
    post = num / (num + (1.0 - s) * l_bg)
    return ScalarRaster(post.astype(np.float32))


def refine(image: ImageRaster, sp: SuperpixelMap, object_regions: ObjectRegionSet,
           saliency: ScalarRaster, class_id: int,
           crf_params: CrfParams = CrfParams(),
           bins=DEFAULT_BINS) -> RefinedObjectRegions:
    """Supplement the mined regions of a single-class image with saliency.

    Regions already labeled class_id always stay foreground; the CRF-binarized
    Bayes posterior can only add regions (majority-vote per superpixel).
    """
    object_classes = set(int(c) for c in np.unique(object_regions.labels)) - {0}
    if not object_classes <= {int(class_id)}:
        raise MultiClassImage(
            f"object regions carry classes {sorted(object_classes)}"
        )
    rendered = render_region_labels(sp, object_regions.labels, unlabeled_as=0)
    model = fit_likelihoods(image, rendered, bins=bins)
    posterior = bayes_posterior(saliency, model, image)
    binary = binarize(posterior, image, crf_params)

    fg_flat = binary.data.ravel()
    labels = np.zeros(sp.region_count, dtype=np.int64)
    for r, pix in enumerate(sp.region_pixels):
        if fg_flat[pix].sum() * 2 > len(pix):  # strict majority; ties -> bg
            labels[r] = class_id
    labels[object_regions.labels == class_id] = class_id
    return RefinedObjectRegions(posterior=posterior, labels=labels)
