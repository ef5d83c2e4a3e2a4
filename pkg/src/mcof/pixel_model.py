"""Pixel-level labeler: per-pixel features plus a small MLP trained with the
labeled-pixel-normalized cross-entropy; predicts dense segmentation masks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import nnet
from .errors import DimensionMismatch, NoLabeledPixels
from .rasters import IGNORE, ImageRaster, LabelRaster
from .region_model import image_to_lab
from .superpixel import SuperpixelMap

FEATURE_DIM = 15
_WINDOW = 5


@dataclass
class PixelTrainConfig:
    epochs: int = 120
    lr: float = 0.2
    momentum: float = 0.9
    l2: float = 1e-5
    hidden: int = 64
    # None trains full-batch on every labeled pixel; otherwise up to this
    # many pixels per image per epoch, stratified by class.
    sample_per_image: int = 1500
    seed: int = 0


def extract_pixel_features(image: ImageRaster, sp: SuperpixelMap) -> np.ndarray:
    """(H, W, 15) features: Lab (3), normalized x/y (2), 5x5 Lab mean and
    stddev (6), superpixel-averaged Lab (3), gradient magnitude (1)."""
    if (sp.height, sp.width) != (image.height, image.width):
        raise DimensionMismatch("superpixel map vs image")
    h, w = image.height, image.width
    lab = image_to_lab(image)

    ys, xs = np.mgrid[0:h, 0:w]
    pos_x = (xs + 0.5) / w
    pos_y = (ys + 0.5) / h

    mean = np.stack(
        [uniform_filter(lab[:, :, c], size=_WINDOW, mode="nearest") for c in range(3)],
        axis=2,
    )
    mean_sq = np.stack(
        [uniform_filter(lab[:, :, c] ** 2, size=_WINDOW, mode="nearest") for c in range(3)],
        axis=2,
    )
    std = np.sqrt(np.maximum(mean_sq - mean ** 2, 0.0))

    ids = sp.region_id.ravel()
    counts = np.bincount(ids, minlength=sp.region_count).astype(np.float64)
    sp_mean = np.zeros((sp.region_count, 3))
    for c in range(3):
        sp_mean[:, c] = np.bincount(
            ids, weights=lab[:, :, c].ravel(), minlength=sp.region_count
        ) / counts
    sp_lab = sp_mean[sp.region_id]

    gy, gx = np.gradient(lab[:, :, 0])
    grad_mag = np.hypot(gx, gy)

    return np.concatenate(
        [
            lab,
            pos_x[:, :, None],
            pos_y[:, :, None],
            mean,
            std,
            sp_lab,
            grad_mag[:, :, None],
        ],
        axis=2,
    )


def seg_loss(predictions, supervision: LabelRaster) -> float:
    """Cross-entropy averaged over every labeled (non-IGNORE) pixel."""
    probs = np.asarray(predictions, dtype=np.float64)
    if probs.shape[:2] != supervision.data.shape:
        raise DimensionMismatch("predictions vs supervision")
    labels = supervision.data.ravel()
    keep = labels != IGNORE
    n = int(keep.sum())
    if n == 0:
        raise NoLabeledPixels("supervision contains no labeled pixels")
    flat = probs.reshape(-1, probs.shape[2])
    p_true = flat[np.nonzero(keep)[0], labels[keep].astype(np.int64)]
    return float(-np.log(np.maximum(p_true, 1e-12)).sum() / n)


def _sample_pixels(features, supervision, limit, rng):
    labels = supervision.data.ravel()
    keep = np.nonzero(labels != IGNORE)[0]
    if keep.size == 0:
        return None
    flat = features.reshape(-1, features.shape[2])
    if limit is None or keep.size <= limit:
        return flat[keep], labels[keep].astype(np.int64)
    present = np.unique(labels[keep])
    per_class = max(limit // len(present), 1)
    chosen = []
    for c in present:
        pool = keep[labels[keep] == c]
        take = min(per_class, pool.size)
        chosen.append(rng.choice(pool, size=take, replace=False))
    idx = np.sort(np.concatenate(chosen))
    return flat[idx], labels[idx].astype(np.int64)


def train_pixel_classifier(features_list, supervisions, class_count,
                           config: PixelTrainConfig = PixelTrainConfig()):
    """Train the MLP labeler; returns (params, train_log).

    Deterministic under a fixed config.seed; raises NoLabeledPixels when the
    supervision set is entirely IGNORE.
    """
    rng = np.random.default_rng(config.seed)
    all_feats = []
    for feats, sup in zip(features_list, supervisions):
        labels = sup.data.ravel()
        keep = labels != IGNORE
        if keep.any():
            all_feats.append(feats.reshape(-1, feats.shape[2])[keep])
    if not all_feats:
        raise NoLabeledPixels("no labeled pixels across the training set")
    stats_x = np.concatenate(all_feats, axis=0)

    params = nnet.init_params(FEATURE_DIM, class_count, hidden=config.hidden, rng=rng)
    nnet.fit_standardizer(params, stats_x)

    velocity = (
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )
    log = nnet.TrainLog()
    for _ in range(config.epochs):
        xs, ys = [], []
        for feats, sup in zip(features_list, supervisions):
            sampled = _sample_pixels(feats, sup, config.sample_per_image, rng)
            if sampled is not None:
                xs.append(sampled[0])
                ys.append(sampled[1])
        X = np.concatenate(xs, axis=0)
        y = np.concatenate(ys, axis=0)
        loss, gw, gb = nnet.loss_and_grad(params, X, y, l2=config.l2)
        log.losses.append(loss / len(y))
        nnet.gd_step(
            params,
            [g / len(y) for g in gw],
            [g / len(y) for g in gb],
            config.lr,
            velocity=velocity,
            momentum=config.momentum,
        )
    return params, log


def predict_proba(image: ImageRaster, sp: SuperpixelMap, params,
                  features=None) -> np.ndarray:
    if features is None:
        features = extract_pixel_features(image, sp)
    flat = features.reshape(-1, features.shape[2])
    probs = nnet.predict_proba(params, flat)
    return probs.reshape(image.height, image.width, -1)


def predict_mask(image: ImageRaster, sp: SuperpixelMap, params,
                 features=None, allowed_classes=None) -> LabelRaster:
    """Argmax mask; allowed_classes (plus background) restricts the argmax,
    keeping predictions inside the image-level label set."""
    probs = predict_proba(image, sp, params, features=features)
    if allowed_classes is not None:
        allowed = sorted(set(int(c) for c in allowed_classes) | {0})
        sub = probs[:, :, allowed].argmax(axis=2)
        labels = np.asarray(allowed, dtype=np.int64)[sub]
    else:
        labels = probs.argmax(axis=2)
    return LabelRaster(labels.astype(np.uint8))
