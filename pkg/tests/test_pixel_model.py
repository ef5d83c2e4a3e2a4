import numpy as np
import pytest

from mcof import nnet
from mcof.errors import DimensionMismatch, NoLabeledPixels
from mcof.pixel_model import (
    FEATURE_DIM,
    PixelTrainConfig,
    extract_pixel_features,
    predict_mask,
    predict_proba,
    seg_loss,
    train_pixel_classifier,
)
from mcof.rasters import IGNORE, ImageRaster, LabelRaster

from conftest import image_of, labels_of, make_superpixel_map


def flat_map(h=8, w=8):
    return make_superpixel_map(np.zeros((h, w), dtype=np.int32))


def two_tone_scene(h=16, w=16):
    img = np.full((h, w, 3), 110, dtype=np.uint8)
    img[:, w // 2 :] = (220, 40, 40)
    grid = np.zeros((h, w), dtype=np.int32)
    grid[:, w // 2 :] = 1
    sp = make_superpixel_map(grid)
    gt = np.zeros((h, w), dtype=np.uint8)
    gt[:, w // 2 :] = 1
    return ImageRaster(img), sp, LabelRaster(gt)


def test_feature_shape_and_ranges():
    img, sp, _ = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    assert feats.shape == (16, 16, FEATURE_DIM)
    assert np.isfinite(feats).all()
    # Normalized positions live strictly inside (0, 1).
    assert feats[:, :, 3].min() > 0 and feats[:, :, 3].max() < 1
    assert feats[:, :, 4].min() > 0 and feats[:, :, 4].max() < 1


def test_feature_local_std_zero_on_flat_image():
    sp = flat_map()
    feats = extract_pixel_features(image_of((90, 90, 90)), sp)
    assert np.abs(feats[:, :, 8:11]).max() < 1e-9  # 5x5 stddev channels
    assert np.abs(feats[:, :, 14]).max() < 1e-9    # gradient magnitude


def test_superpixel_mean_channels_constant_per_region():
    img, sp, _ = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    for r in range(sp.region_count):
        region = feats[sp.region_id == r][:, 11:14]
        assert np.abs(region - region[0]).max() < 1e-12


def test_feature_shape_mismatch():
    sp = flat_map(8, 8)
    with pytest.raises(DimensionMismatch):
        extract_pixel_features(image_of((0, 0, 0), 9, 8), sp)


def test_seg_loss_uniform_predictions_is_ln2():
    probs = np.full((4, 4, 2), 0.5)
    sup = labels_of(np.zeros((4, 4), dtype=np.uint8))
    assert seg_loss(probs, sup) == pytest.approx(np.log(2.0), rel=1e-12)


def test_seg_loss_perfect_predictions_is_zero():
    probs = np.zeros((2, 2, 3))
    probs[:, :, 1] = 1.0
    sup = labels_of(np.ones((2, 2), dtype=np.uint8))
    assert seg_loss(probs, sup) == pytest.approx(0.0, abs=1e-12)


def test_seg_loss_matches_hand_sum():
    probs = np.zeros((1, 3, 2))
    probs[0, 0] = (0.9, 0.1)
    probs[0, 1] = (0.3, 0.7)
    probs[0, 2] = (0.5, 0.5)
    sup = labels_of(np.array([[0, 1, IGNORE]], dtype=np.uint8))
    expected = -(np.log(0.9) + np.log(0.7)) / 2
    assert seg_loss(probs, sup) == pytest.approx(expected, abs=1e-9)


def test_seg_loss_normalizes_by_labeled_count_only():
    probs = np.full((2, 2, 2), 0.5)
    half = np.array([[0, IGNORE], [IGNORE, IGNORE]], dtype=np.uint8)
    assert seg_loss(probs, labels_of(half)) == pytest.approx(np.log(2.0))


def test_seg_loss_all_ignore_raises():
    probs = np.full((2, 2, 2), 0.5)
    sup = labels_of(np.full((2, 2), IGNORE, dtype=np.uint8))
    with pytest.raises(NoLabeledPixels):
        seg_loss(probs, sup)
    with pytest.raises(DimensionMismatch):
        seg_loss(probs, labels_of(np.zeros((3, 2), dtype=np.uint8)))


def test_gradient_check_on_pixel_features(rng):
    img, sp, _ = two_tone_scene()
    feats = extract_pixel_features(img, sp).reshape(-1, FEATURE_DIM)
    sel = rng.choice(len(feats), size=12, replace=False)
    X = feats[sel]
    y = rng.integers(0, 2, size=12)
    params = nnet.init_params(FEATURE_DIM, 2, hidden=4, rng=rng, scale=0.2)
    nnet.fit_standardizer(params, X)
    assert nnet.max_relative_gradient_error(params, X, y, l2=1e-5) < 1e-5


def test_training_learns_separable_scene():
    img, sp, gt = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    cfg = PixelTrainConfig(epochs=300, hidden=16, sample_per_image=None, seed=0)
    params, log = train_pixel_classifier([feats], [gt], 2, cfg)
    mask = predict_mask(img, sp, params, features=feats)
    assert (mask.data == gt.data).mean() >= 0.99
    assert log.final < log.initial


def test_duplicating_an_image_does_not_change_full_batch_training():
    img, sp, gt = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    cfg = PixelTrainConfig(epochs=8, hidden=8, sample_per_image=None, seed=3)
    p1, _ = train_pixel_classifier([feats], [gt], 2, cfg)
    p2, _ = train_pixel_classifier([feats, feats], [gt, gt], 2, cfg)
    out1 = predict_proba(img, sp, p1, features=feats)
    out2 = predict_proba(img, sp, p2, features=feats)
    # The per-pixel mean loss is invariant to duplicating every sample, so
    # full-batch training follows the same trajectory.
    assert np.allclose(out1, out2, atol=1e-6)


def test_training_is_deterministic():
    img, sp, gt = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    cfg = PixelTrainConfig(epochs=30, hidden=8, sample_per_image=100, seed=11)
    p1, l1 = train_pixel_classifier([feats], [gt], 2, cfg)
    p2, l2 = train_pixel_classifier([feats], [gt], 2, cfg)
    for a, b in zip(p1.weights, p2.weights):
        assert (a == b).all()
    assert l1.losses == l2.losses


def test_training_requires_labeled_pixels():
    img, sp, _ = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    empty = labels_of(np.full((16, 16), IGNORE, dtype=np.uint8))
    with pytest.raises(NoLabeledPixels):
        train_pixel_classifier([feats], [empty], 2)


def test_ignore_pixels_do_not_supervise():
    img, sp, gt = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    # Mislabel the object half as class 2, then hide it under IGNORE: the
    # model must never see class 2.
    poisoned = gt.data.copy()
    poisoned[gt.data == 1] = 2
    poisoned[poisoned == 2] = IGNORE
    cfg = PixelTrainConfig(epochs=50, hidden=8, sample_per_image=None, seed=0)
    params, _ = train_pixel_classifier([feats], [labels_of(poisoned)], 3, cfg)
    probs = predict_proba(img, sp, params, features=feats)
    assert probs[:, :, 2].max() < 0.5


def test_predict_mask_allowed_classes_restriction():
    img, sp, gt = two_tone_scene()
    feats = extract_pixel_features(img, sp)
    sup = gt.data.copy()
    sup[sup == 1] = 3
    cfg = PixelTrainConfig(epochs=200, hidden=16, sample_per_image=None, seed=0)
    params, _ = train_pixel_classifier([feats], [labels_of(sup)], 4, cfg)
    free = predict_mask(img, sp, params, features=feats)
    assert (free.data == 3).any()
    restricted = predict_mask(img, sp, params, features=feats,
                              allowed_classes=[1])
    assert set(np.unique(restricted.data)) <= {0, 1}
