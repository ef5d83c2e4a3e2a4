"""Orchestration of the iterative mining loop and the direct-iterative
ablation baseline.

Each iteration: train the region classifier on current seeds, predict object
regions, refine single-class images with saliency (first iteration only),
train the pixel labeler on the refined regions, predict masks, then derive
the next seeds from the masks. The direct baseline shares iteration 0 and
afterwards retrains the pixel labeler on its own previous masks.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import evaluate as ev
from .crf import CrfParams
from .errors import ConfigError, EmptyPartition, RuntimeStageError
from .pixel_model import (
    PixelTrainConfig,
    extract_pixel_features,
    predict_mask,
    train_pixel_classifier,
)
from .params_io import save_params
from .rasters import (
    IGNORE,
    DatasetManifest,
    LabelRaster,
    load_png,
    load_scalar_raster,
    save_png,
)
from .region_model import (
    RegionTrainConfig,
    extract_features,
    predict_regions,
    train_region_classifier,
)
from .saliency_refine import refine
from .seeding import (
    UNLABELED,
    SeedParams,
    extract_seeds,
    render_region_labels,
    seeds_from_mask,
)
from .superpixel import FhParams, segment

MODE_MCOF = "mcof"
MODE_DIRECT = "direct"

_STAGE_CODES = {"seeding": 1, "region": 2, "refine": 3, "pixel": 4}


@dataclass
class LoopConfig:
    max_iterations: int = 5
    use_saliency: bool = True
    mode: str = MODE_MCOF
    seed: int = 0
    fh: FhParams = field(default_factory=lambda: FhParams(sigma=0.8, k=100.0, min_size=10))
    seed_params: SeedParams = field(default_factory=SeedParams)
    region_cfg: RegionTrainConfig = field(default_factory=RegionTrainConfig)
    pixel_cfg: PixelTrainConfig = field(default_factory=PixelTrainConfig)
    crf: CrfParams = field(default_factory=CrfParams)
    early_stop_change: float = None  # fraction of changed pixels, None = off
    out_dir: str = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.mode not in (MODE_MCOF, MODE_DIRECT):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class IterationState:
    t: int
    seeds: list  # RegionSeedSet per image, None at t >= 1 in direct mode
    object_regions: list  # ObjectRegionSet per image or None
    refined: list  # per-region label arrays (== object labels at t >= 1)
    supervisions: list  # LabelRaster per image used to train the pixel model
    masks: list  # LabelRaster per image
    region_params: object
    pixel_params: object
    metrics: dict  # stage name -> mIoU, empty without ground truth
    stages_run: list


@dataclass
class DatasetBundle:
    manifest: DatasetManifest
    images: list
    superpixels: list
    region_features: list
    pixel_features: list
    heatmaps: list  # dict class -> ScalarRaster per image
    saliencies: list  # ScalarRaster or None per image
    ground_truth: list  # LabelRaster or None per image

    @property
    def class_count(self):
        return self.manifest.class_count

    @property
    def labels(self):
        return [e.labels for e in self.manifest.entries]


def load_bundle(manifest: DatasetManifest, fh: FhParams) -> DatasetBundle:
    """Load every entry and precompute per-image superpixels and features."""
    images, sps, rfeats, pfeats, heatmaps, sals, gts = [], [], [], [], [], [], []
    for entry in manifest.entries:
        img = load_png(entry.image_path)
        sp = segment(img, fh)
        images.append(img)
        sps.append(sp)
        rfeats.append(extract_features(img, sp))
        pfeats.append(extract_pixel_features(img, sp))
        heatmaps.append(
            {c: load_scalar_raster(p) for c, p in entry.heatmap_paths.items()}
        )
        sals.append(
            load_scalar_raster(entry.saliency_path)
            if entry.saliency_path is not None
            else None
        )
        if entry.gt_path is not None:
            gt = load_png(entry.gt_path)
            gt.check_class_range(manifest.class_count)
            gts.append(gt)
        else:
            gts.append(None)
    return DatasetBundle(
        manifest=manifest,
        images=images,
        superpixels=sps,
        region_features=rfeats,
        pixel_features=pfeats,
        heatmaps=heatmaps,
        saliencies=sals,
        ground_truth=gts,
    )


def _stage_seed(root, t, stage):
    seq = np.random.SeedSequence((root, t, _STAGE_CODES[stage]))
    return int(seq.generate_state(1)[0])


def check_class_closure(label_values, image_labels, what):
    """Every object class in an artifact must come from the image label set."""
    found = set(int(v) for v in np.unique(label_values)) - {0, IGNORE, UNLABELED}
    allowed = set(int(c) for c in image_labels)
    if not found <= allowed:
        raise RuntimeStageError(
            f"{what}: classes {sorted(found - allowed)} outside image labels "
            f"{sorted(allowed)}"
        )


def _eval_stage(rasters, bundle):
    pairs = [(p, g) for p, g in zip(rasters, bundle.ground_truth) if g is not None]
    if not pairs:
        return None
    return ev.evaluate([p for p, _ in pairs], [g for _, g in pairs],
                       bundle.class_count).miou


def _mask_change_fraction(prev_masks, masks):
    changed = sum(int((p.data != m.data).sum()) for p, m in zip(prev_masks, masks))
    total = sum(m.data.size for m in masks)
    return changed / total


def run_loop(bundle: DatasetBundle, config: LoopConfig):
    """Shared driver for both modes; returns the list of IterationStates."""
    if config.use_saliency:
        for entry, sal in zip(bundle.manifest.entries, bundle.saliencies):
            if len(entry.labels) == 1 and sal is None:
                raise ConfigError(
                    f"{entry.image_path}: single-class image without saliency "
                    "while use_saliency is enabled"
                )

    n = len(bundle.images)
    history = []
    seeds = None
    prev_masks = None
    for t in range(config.max_iterations):
        stages_run = []
        direct_tail = config.mode == MODE_DIRECT and t >= 1

        if not direct_tail:
            if t == 0:
                seeds = [
                    extract_seeds(sp, hm, config.seed_params, image_labels=labels)
                    for sp, hm, labels in zip(
                        bundle.superpixels, bundle.heatmaps, bundle.labels
                    )
                ]
            else:
                seeds = [
                    seeds_from_mask(sp, mask)
                    for sp, mask in zip(bundle.superpixels, prev_masks)
                ]
            for s, labels in zip(seeds, bundle.labels):
                check_class_closure(s.labels, labels, f"seeds t={t}")
            stages_run.append("seeding")

            region_cfg = RegionTrainConfig(**{**vars(config.region_cfg),
                                              "seed": _stage_seed(config.seed, t, "region")})
            region_params, _ = train_region_classifier(
                bundle.region_features, seeds, bundle.class_count, region_cfg
            )
            object_regions = [
                predict_regions(feats, region_params, labels)
                for feats, labels in zip(bundle.region_features, bundle.labels)
            ]
            for o, labels in zip(object_regions, bundle.labels):
                check_class_closure(o.labels, labels, f"object regions t={t}")
            stages_run.append("region")

            refined = [o.labels for o in object_regions]
            if t == 0 and config.use_saliency:
                refined = []
                for i in range(n):
                    labels = bundle.labels[i]
                    o = object_regions[i]
                    if len(labels) == 1 and bundle.saliencies[i] is not None:
                        img = bundle.images[i]
                        crf = config.crf.scaled_for(img.width, img.height)
                        try:
                            r = refine(img, bundle.superpixels[i], o,
                                       bundle.saliencies[i], labels[0], crf)
                            refined.append(r.labels)
                        except EmptyPartition:
                            refined.append(o.labels)
                    else:
                        refined.append(o.labels)
                stages_run.append("refine")
            for r, labels in zip(refined, bundle.labels):
                check_class_closure(r, labels, f"refined t={t}")

            supervisions = [
                render_region_labels(sp, r, unlabeled_as=IGNORE)
                for sp, r in zip(bundle.superpixels, refined)
            ]
        else:
            seeds, object_regions, refined = None, None, None
            supervisions = prev_masks

        pixel_cfg = PixelTrainConfig(**{**vars(config.pixel_cfg),
                                        "seed": _stage_seed(config.seed, t, "pixel")})
        pixel_params, _ = train_pixel_classifier(
            bundle.pixel_features, supervisions, bundle.class_count, pixel_cfg
        )
        masks = [
            predict_mask(img, sp, pixel_params, features=feats, allowed_classes=labels)
            for img, sp, feats, labels in zip(
                bundle.images, bundle.superpixels, bundle.pixel_features, bundle.labels
            )
        ]
        for m, labels in zip(masks, bundle.labels):
            check_class_closure(m.data, labels, f"masks t={t}")
        stages_run.append("pixel")

        metrics = {}
        if any(g is not None for g in bundle.ground_truth):
            if seeds is not None:
                seed_rasters = [
                    render_region_labels(sp, s.labels, unlabeled_as=0)
                    for sp, s in zip(bundle.superpixels, seeds)
                ]
                metrics["seeds"] = _eval_stage(seed_rasters, bundle)
                region_rasters = [
                    render_region_labels(sp, o.labels, unlabeled_as=0)
                    for sp, o in zip(bundle.superpixels, object_regions)
                ]
                metrics["regionnet"] = _eval_stage(region_rasters, bundle)
                if t == 0:
                    refined_rasters = [
                        render_region_labels(sp, r, unlabeled_as=0)
                        for sp, r in zip(bundle.superpixels, refined)
                    ]
                    metrics["refined"] = _eval_stage(refined_rasters, bundle)
            metrics["pixelnet"] = _eval_stage(masks, bundle)

        state = IterationState(
            t=t,
            seeds=seeds,
            object_regions=object_regions,
            refined=refined,
            supervisions=supervisions,
            masks=masks,
            region_params=None if direct_tail else region_params,
            pixel_params=pixel_params,
            metrics=metrics,
            stages_run=stages_run,
        )
        history.append(state)
        if config.out_dir:
            _write_iteration(state, bundle, config.out_dir)

        if (
            config.early_stop_change is not None
            and prev_masks is not None
            and _mask_change_fraction(prev_masks, masks) < config.early_stop_change
        ):
            break
        prev_masks = masks

    if config.out_dir:
        all_rows = []
        for state in history:
            for stage in ("seeds", "regionnet", "refined", "pixelnet"):
                if stage in state.metrics:
                    all_rows.append((state.t, stage, state.metrics[stage]))
        ev.write_metrics_csv(all_rows, os.path.join(config.out_dir, "metrics.csv"))
    return history


def _write_iteration(state: IterationState, bundle: DatasetBundle, out_dir):
    it_dir = os.path.join(out_dir, f"iter{state.t}")
    stems = [e.stem for e in bundle.manifest.entries]
    for sub in ("seeds", "regions", "refined", "masks", "params"):
        os.makedirs(os.path.join(it_dir, sub), exist_ok=True)
    for i, stem in enumerate(stems):
        sp = bundle.superpixels[i]
        if state.seeds is not None:
            save_png(render_region_labels(sp, state.seeds[i].labels),
                     os.path.join(it_dir, "seeds", f"{stem}.png"))
            with open(os.path.join(it_dir, "seeds", f"{stem}.txt"), "w",
                      encoding="utf-8") as f:
                for r, lab in enumerate(state.seeds[i].labels):
                    f.write(f"{r} {lab}\n")
        if state.object_regions is not None:
            save_png(render_region_labels(sp, state.object_regions[i].labels),
                     os.path.join(it_dir, "regions", f"{stem}.png"))
        if state.refined is not None:
            save_png(render_region_labels(sp, state.refined[i]),
                     os.path.join(it_dir, "refined", f"{stem}.png"))
        save_png(state.masks[i], os.path.join(it_dir, "masks", f"{stem}.png"))
    if state.region_params is not None:
        save_params(state.region_params, os.path.join(it_dir, "params", "region.mcpb"))
    save_params(state.pixel_params, os.path.join(it_dir, "params", "pixel.mcpb"))
    rows = [
        (state.t, stage, state.metrics[stage])
        for stage in ("seeds", "regionnet", "refined", "pixelnet")
        if stage in state.metrics
    ]
    ev.write_metrics_csv(rows, os.path.join(it_dir, "metrics.csv"))


def run_mcof(manifest: DatasetManifest, config: LoopConfig):
    """Full iterative mining loop (Algorithm-style control flow)."""
    if config.mode != MODE_MCOF:
        raise ConfigError("run_mcof requires mode 'mcof'")
    bundle = load_bundle(manifest, config.fh)
    return run_loop(bundle, config)


def run_direct_iterative(manifest: DatasetManifest, config: LoopConfig):
    """Ablation baseline: iteration 0 as in the full loop, later iterations
    retrain the pixel labeler directly on the previous masks."""
    if config.mode != MODE_DIRECT:
        raise ConfigError("run_direct_iterative requires mode 'direct'")
    bundle = load_bundle(manifest, config.fh)
    return run_loop(bundle, config)
