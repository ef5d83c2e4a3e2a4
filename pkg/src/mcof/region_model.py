"""Region-level classifier: hand-crafted superpixel features plus a softmax
model trained on seed regions, with wrong-class removal at prediction time.
"""

from dataclasses import dataclass

import numpy as np
from skimage.color import rgb2lab

from . import nnet
from .errors import DegenerateData, DimensionMismatch
from .rasters import ImageRaster
from .seeding import UNLABELED, RegionSeedSet
from .superpixel import SuperpixelMap

FEATURE_DIM = 39
_COLOR_BINS = 8
_GRAD_BINS = 8


@dataclass
class RegionTrainConfig:
    epochs: int = 300
    lr: float = 0.1
    l2: float = 1e-4
    hidden: int = None
    # Background regions vastly outnumber object regions in seed sets; cap
    # them at bg_cap x the largest object class per epoch.
    balance_bg: bool = True
    bg_cap: float = 1.5
    seed: int = 0


@dataclass(frozen=True)
class ObjectRegionSet:
    labels: np.ndarray  # per-region class id after wrong-class removal
    posteriors: np.ndarray  # (n_regions, C), unmodified softmax outputs


def image_to_lab(image: ImageRaster) -> np.ndarray:
    return rgb2lab(image.data.astype(np.float64) / 255.0)


def extract_features(image: ImageRaster, sp: SuperpixelMap) -> np.ndarray:
    """39-dim feature per region: RGB histogram (24), Lab mean (3),
    normalized centroid (2), area fraction (1), gradient-orientation
    histogram (8), boundary contrast (1)."""
    if (sp.height, sp.width) != (image.height, image.width):
        raise DimensionMismatch(
            f"superpixel map {sp.width}x{sp.height} vs image "
            f"{image.width}x{image.height}"
        )
    h, w = image.height, image.width
    rgb = image.data.reshape(-1, 3)
    lab = image_to_lab(image)
    lab_flat = lab.reshape(-1, 3)

    gy, gx = np.gradient(lab[:, :, 0])
    mag = np.hypot(gx, gy).ravel()
    ang = np.arctan2(gy, gx).ravel()
    grad_bin = np.clip(
        ((ang + np.pi) / (2 * np.pi) * _GRAD_BINS).astype(np.int64), 0, _GRAD_BINS - 1
    )

    ys, xs = np.divmod(np.arange(h * w), w)
    cy = (ys + 0.5) / h
    cx = (xs + 0.5) / w

    n = sp.region_count
    feats = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    lab_means = np.zeros((n, 3), dtype=np.float64)
    for r, pix in enumerate(sp.region_pixels):
        m = len(pix)
        hist = np.concatenate(
            [
                np.bincount(rgb[pix, c] >> 5, minlength=_COLOR_BINS)
                for c in range(3)
            ]
        ).astype(np.float64)
        hist /= 3 * m
        lab_means[r] = lab_flat[pix].mean(axis=0)
        ghist = np.bincount(grad_bin[pix], weights=mag[pix], minlength=_GRAD_BINS)
        gsum = ghist.sum()
        if gsum > 0:
            ghist = ghist / gsum
        feats[r, 0:24] = hist
        feats[r, 24:27] = lab_means[r]
        feats[r, 27] = cx[pix].mean()
        feats[r, 28] = cy[pix].mean()
        feats[r, 29] = m / (h * w)
        feats[r, 30:38] = ghist

    for r in range(n):
        nbrs = sp.neighbors(r)
        if nbrs.size:
            d = np.linalg.norm(lab_means[nbrs] - lab_means[r], axis=1)
            feats[r, 38] = d.mean() / 100.0
    return feats


def region_loss_and_grad(params, features, labels, l2=0.0):
    """Summed cross-entropy over region samples, with analytic gradients."""
    return nnet.loss_and_grad(params, features, labels, l2=l2)


def gradient_check(params, features, labels, l2=0.0, h=1e-5):
    """Max relative error of analytic vs central-difference gradients."""
    return nnet.max_relative_gradient_error(params, features, labels, l2=l2, h=h)


def _gather_training_set(features_list, seed_sets, class_count):
    xs, ys = [], []
    for feats, seeds in zip(features_list, seed_sets):
        labels = seeds.labels if isinstance(seeds, RegionSeedSet) else np.asarray(seeds)
        keep = labels != UNLABELED
        xs.append(feats[keep])
        ys.append(labels[keep])
    X = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0).astype(np.int64)
    if len(y) == 0:
        raise DegenerateData("no labeled regions to train on")
    if y.max() >= class_count:
        raise DegenerateData(f"label {y.max()} outside [0, {class_count})")
    return X, y


def train_region_classifier(features_list, seed_sets, class_count,
                            config: RegionTrainConfig = RegionTrainConfig()):
    """Train the softmax region classifier by gradient descent.

    Returns (params, train_log). Deterministic for a fixed config.seed.
    """
    X, y = _gather_training_set(features_list, seed_sets, class_count)
    present = np.unique(y)
    counts = np.bincount(y, minlength=class_count)
    for c in present:
        if counts[c] == 0:
            raise DegenerateData(f"class {c} has zero samples")

    rng = np.random.default_rng(config.seed)
    params = nnet.init_params(X.shape[1], class_count, hidden=config.hidden, rng=rng)
    nnet.fit_standardizer(params, X)

    bg_idx = np.nonzero(y == 0)[0]
    fg_idx = np.nonzero(y != 0)[0]
    obj_counts = counts[1:]
    bg_limit = None
    if config.balance_bg and obj_counts.max(initial=0) > 0:
        bg_limit = int(config.bg_cap * obj_counts.max())

    log = nnet.TrainLog()
    for _ in range(config.epochs + 1):
        if bg_limit is not None and len(bg_idx) > bg_limit:
            picked = rng.choice(len(bg_idx), size=bg_limit, replace=False)
            idx = np.concatenate([fg_idx, bg_idx[np.sort(picked)]])
        else:
            idx = np.arange(len(y))
        loss, gw, gb = nnet.loss_and_grad(params, X[idx], y[idx], l2=config.l2)
        log.losses.append(loss / len(idx))
        nnet.gd_step(params, [g / len(idx) for g in gw], [g / len(idx) for g in gb],
                     config.lr)
    return params, log


def predict_regions(features, params, image_labels) -> ObjectRegionSet:
    """Softmax posteriors and argmax labels; argmax classes outside the
    image-level label set are relabeled background (posteriors untouched)."""
    posteriors = nnet.predict_proba(params, np.asarray(features, dtype=np.float64))
    labels = posteriors.argmax(axis=1).astype(np.int64)
    allowed = set(int(c) for c in image_labels) | {0}
    outside = np.array([int(c) not in allowed for c in labels])
    labels[outside] = 0
    return ObjectRegionSet(labels=labels, posteriors=posteriors)
