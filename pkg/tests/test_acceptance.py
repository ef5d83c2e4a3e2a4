"""End-to-end acceptance checks: exact-partition superpixels, gradient
correctness, Bayes fusion identities, CRF behavior against a dense reference,
class closure, benchmark quality and determinism of the full pipeline."""

import csv
import os
import time

import numpy as np
import pytest

from mcof import nnet
from mcof.cli import EXIT_OK, main
from mcof.crf import CrfParams, mean_field
from mcof.pixel_model import FEATURE_DIM as PIXEL_DIM
from mcof.rasters import IGNORE, ImageRaster, load_png
from mcof.region_model import FEATURE_DIM as REGION_DIM
from mcof.saliency_refine import LikelihoodModel, bayes_posterior
from mcof.superpixel import FhParams, segment
from mcof.evaluate import evaluate

from conftest import labels_of, scalar_of
from oracles import guillotine_partition, iou_report, mean_field_reference

BENCH = ["--n", "40", "--size", "64", "--classes", "4", "--seed", "0"]
RUN = ["--classes", "5", "--iters", "3", "--seed", "0"]


@pytest.fixture(scope="module")
def bench_manifest(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("bench"))
    assert main(["synth", "--out", root] + BENCH) == EXIT_OK
    return os.path.join(root, "manifest.txt")


def _run(manifest, out, extra):
    start = time.monotonic()
    code = main(["run", "--manifest", manifest, "--out", out] + RUN + extra)
    elapsed = time.monotonic() - start
    assert code == EXIT_OK
    return out, elapsed


@pytest.fixture(scope="module")
def mcof_run(bench_manifest, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run_mcof"))
    return _run(bench_manifest, out, ["--mode", "mcof"])


@pytest.fixture(scope="module")
def mcof_rerun(bench_manifest, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run_mcof2"))
    return _run(bench_manifest, out, ["--mode", "mcof"])


@pytest.fixture(scope="module")
def direct_run(bench_manifest, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run_direct"))
    return _run(bench_manifest, out, ["--mode", "direct"])


@pytest.fixture(scope="module")
def nosal_run(bench_manifest, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run_nosal"))
    return _run(bench_manifest, out, ["--mode", "mcof", "--no-saliency"])


def read_metrics(run_dir):
    table = {}
    with open(os.path.join(run_dir, "metrics.csv")) as f:
        for row in list(csv.reader(f))[1:]:
            table[(int(row[0]), row[1])] = float(row[2]) if row[2] else None
    return table


# --- criterion 1: exact recovery of piecewise-constant partitions ----------

def test_superpixels_recover_planted_partitions_exactly():
    rng = np.random.default_rng(42)
    levels = np.array([0, 128, 255], dtype=np.uint8)
    start = time.monotonic()
    for _ in range(20):
        tile_map = guillotine_partition(rng, 64, 64, n_cuts=10)
        n_tiles = int(tile_map.max()) + 1
        # Distinct colors per tile: every pair differs by >= 128 in some
        # channel, far above the merge threshold at k=50.
        codes = rng.permutation(27)[:n_tiles]
        palette = np.stack(np.unravel_index(codes, (3, 3, 3)), axis=1)
        img = ImageRaster(levels[palette[tile_map]])
        sp = segment(img, FhParams(sigma=0.0, k=50.0, min_size=1))
        got = {frozenset(map(int, pix)) for pix in sp.region_pixels}
        flat = tile_map.ravel()
        want = {frozenset(np.nonzero(flat == t)[0].tolist())
                for t in range(n_tiles)}
        assert got == want
    assert time.monotonic() - start < 5.0


# --- criterion 2: analytic gradients of both training losses ---------------

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    start = time.monotonic()
    region_params = nnet.init_params(REGION_DIM, 5, rng=rng, scale=0.1)
    nnet.fit_standardizer(region_params, rng.normal(size=(50, REGION_DIM)))
    for _ in range(10):
        X = rng.normal(size=(6, REGION_DIM))
        y = rng.integers(0, 5, size=6)
        assert nnet.max_relative_gradient_error(
            region_params, X, y, l2=1e-4) < 1e-4

    pixel_params = nnet.init_params(PIXEL_DIM, 5, hidden=8, rng=rng, scale=0.2)
    nnet.fit_standardizer(pixel_params, rng.normal(size=(50, PIXEL_DIM)))
    for _ in range(10):
        X = rng.normal(size=(6, PIXEL_DIM))
        y = rng.integers(0, 5, size=6)
        assert nnet.max_relative_gradient_error(
            pixel_params, X, y, l2=1e-5) < 1e-4
    assert time.monotonic() - start < 10.0


# --- criterion 3: Bayes fusion identities ----------------------------------

def test_bayes_fusion_identities():
    rng = np.random.default_rng(11)
    n = 8 ** 3
    uniform = np.full(n, 1.0 / n)  # power-of-two entries cancel exactly
    equal = LikelihoodModel(object_hist=uniform,
                            background_hist=uniform.copy())
    img = ImageRaster(np.ascontiguousarray(
        rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)))

    s = (rng.integers(0, 257, size=(16, 16)) / 256.0).astype(np.float32)
    post = bayes_posterior(scalar_of(s), equal, img)
    assert (post.data == s).all()  # equal likelihoods: posterior == prior

    skewed = LikelihoodModel(
        object_hist=rng.dirichlet(np.ones(n) * 0.2) + 1e-9,
        background_hist=rng.dirichlet(np.ones(n) * 0.2) + 1e-9,
    )
    pinned = np.zeros((16, 16), dtype=np.float32)
    pinned[8:] = 1.0
    post = bayes_posterior(scalar_of(pinned), skewed, img)
    assert (post.data[:8] == 0.0).all()
    assert (post.data[8:] == 1.0).all()

    # Monotone in the prior: >= 1000 pixel triples (s1 <= s2, same colors).
    for _ in range(5):
        s1 = rng.random((16, 16)).astype(np.float32)
        s2 = (s1 + rng.random((16, 16)).astype(np.float32)
              * (1.0 - s1)).astype(np.float32)
        p1 = bayes_posterior(scalar_of(s1), skewed, img).data
        p2 = bayes_posterior(scalar_of(s2), skewed, img).data
        assert (p2 >= p1).all()


# --- criterion 4: mean-field CRF behavior ----------------------------------

def test_crf_against_dense_reference():
    rng = np.random.default_rng(5)
    unary = rng.random((12, 10, 3)) + 0.05
    unary /= unary.sum(axis=2, keepdims=True)
    img_small = ImageRaster(np.ascontiguousarray(
        rng.integers(0, 256, size=(12, 10, 3), dtype=np.uint8)))

    out = mean_field(unary, img_small, CrfParams(iterations=0))
    assert (out == unary).all()

    zeroed = CrfParams(iterations=4, w_smooth=0.0, w_appear=0.0)
    out = mean_field(unary, img_small, zeroed)
    assert (out.argmax(axis=2) == unary.argmax(axis=2)).all()

    full = CrfParams(iterations=3).scaled_for(10, 12)
    out = mean_field(unary, img_small, full)
    assert np.abs(out.sum(axis=2) - 1.0).max() < 1e-6

    # 16x16 salt-noise case against the dense quadratic reference.
    img = np.full((16, 16, 3), 40, dtype=np.uint8)
    img[:, 8:] = (210, 210, 210)
    p_fg = np.where(np.arange(16)[None, :] >= 8, 0.75, 0.25) \
        + rng.normal(0, 0.2, size=(16, 16))
    p_fg = np.clip(p_fg, 0.03, 0.97)
    unary2 = np.stack([1.0 - p_fg, p_fg], axis=2)
    params = CrfParams(iterations=3, w_smooth=2.0, theta_gamma=2.0,
                       w_appear=4.0, theta_alpha=2.0, theta_beta=20.0)
    got = mean_field(unary2, ImageRaster(img), params)
    ref = mean_field_reference(unary2, img, params.iterations,
                               params.w_smooth, params.theta_gamma,
                               params.w_appear, params.theta_alpha,
                               params.theta_beta)
    assert (got.argmax(axis=2) == ref.argmax(axis=2)).all()


# --- criterion 5: class closure of every emitted artifact ------------------

def test_all_run_artifacts_respect_image_label_sets(bench_manifest, mcof_run):
    from mcof.rasters import load_manifest

    run_dir, _ = mcof_run
    manifest = load_manifest(bench_manifest, class_count=5)
    for t in range(3):
        it_dir = os.path.join(run_dir, f"iter{t}")
        for entry in manifest.entries:
            allowed = set(entry.labels)
            for sub in ("seeds", "regions", "refined", "masks"):
                path = os.path.join(it_dir, sub, f"{entry.stem}.png")
                if not os.path.exists(path):
                    continue
                found = set(
                    int(v) for v in np.unique(load_png(path).data)
                ) - {0, IGNORE}
                assert found <= allowed, f"{path}: {found} vs {allowed}"


# --- criterion 6: benchmark quality, trend and runtime ---------------------

def test_benchmark_quality_and_runtime(mcof_run, direct_run):
    mcof_dir, mcof_time = mcof_run
    direct_dir, direct_time = direct_run
    m = read_metrics(mcof_dir)
    d = read_metrics(direct_dir)

    assert m[(0, "seeds")] < 0.4
    curve = [m[(t, "pixelnet")] for t in range(3)]
    assert curve[-1] >= 0.8
    for a, b in zip(curve[:-1], curve[1:]):
        assert b >= a - 0.02  # nondecreasing up to a small dip allowance

    # Region mining beats retraining directly on previous masks.
    assert curve[-1] - d[(2, "pixelnet")] >= 0.05
    # Both modes share the first iteration exactly.
    assert m[(0, "pixelnet")] == d[(0, "pixelnet")]

    assert mcof_time + direct_time < 300.0


# --- criterion 7: saliency ablation ----------------------------------------

def test_saliency_refinement_helps(mcof_run, nosal_run):
    with_sal = read_metrics(mcof_run[0])
    without = read_metrics(nosal_run[0])
    assert with_sal[(2, "pixelnet")] >= without[(2, "pixelnet")]


# --- criterion 8: mIoU agrees exactly with a counting oracle ---------------

def test_miou_matches_counting_oracle_exactly():
    rng = np.random.default_rng(3)
    for _ in range(50):
        pred = rng.integers(0, 5, size=(8, 8)).astype(np.uint8)
        gt = rng.integers(0, 5, size=(8, 8)).astype(np.uint8)
        gt[rng.random((8, 8)) < 0.1] = IGNORE
        rep = evaluate([labels_of(pred)], [labels_of(gt)], 5)
        conf, per_class, miou = iou_report([pred], [gt], 5)
        assert (rep.confusion == conf).all()
        assert rep.per_class_iou == per_class
        assert rep.miou == miou


# --- criterion 9: byte-identical reruns ------------------------------------

def test_pipeline_is_byte_identical_across_reruns(mcof_run, mcof_rerun):
    a, _ = mcof_run
    b, _ = mcof_rerun

    def read(path):
        with open(path, "rb") as f:
            return f.read()

    assert read(os.path.join(a, "metrics.csv")) == \
        read(os.path.join(b, "metrics.csv"))
    for t in range(3):
        it_a = os.path.join(a, f"iter{t}")
        it_b = os.path.join(b, f"iter{t}")
        assert read(os.path.join(it_a, "metrics.csv")) == \
            read(os.path.join(it_b, "metrics.csv"))
        mask_dir = os.path.join(it_a, "masks")
        names = sorted(os.listdir(mask_dir))
        assert names == sorted(os.listdir(os.path.join(it_b, "masks")))
        for name in names:
            assert read(os.path.join(mask_dir, name)) == \
                read(os.path.join(it_b, "masks", name)), name
