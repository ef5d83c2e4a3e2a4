"""Command line interface: `mcof <subcommand>`.

Exit codes: 0 success, 2 validation error (bad inputs/arguments), 1 runtime
error.
"""

import argparse
import os
import sys

import numpy as np

from . import loop as loop_mod
from .crf import CrfParams
from .errors import McofError, ValidationError
from .evaluate import evaluate, render_overlay
from .pixel_model import PixelTrainConfig, extract_pixel_features, predict_mask
from .params_io import load_params, save_params
from .rasters import (
    ImageRaster,
    LabelRaster,
    load_manifest,
    load_png,
    load_scalar_raster,
    save_png,
    save_scalar_raster,
)
from .region_model import RegionTrainConfig
from .saliency_refine import bayes_posterior, fit_likelihoods
from .seeding import SeedParams, extract_seeds, render_region_labels
from .superpixel import FhParams, save_superpixels, segment
from .synthetic import SyntheticSpec, generate_synthetic_dataset

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for interface compatibility; runs sequentially")
    p.add_argument("--out", required=True)


def _add_fh(p, min_size=10):
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--k", type=float, default=100.0)
    p.add_argument("--min-size", type=int, default=min_size)


def _add_crf(p):
    p.add_argument("--crf-iters", type=int, default=5)
    p.add_argument("--crf-wsmooth", type=float, default=3.0)
    p.add_argument("--crf-theta-gamma", type=float, default=3.0)
    p.add_argument("--crf-wappear", type=float, default=5.0)
    p.add_argument("--crf-theta-alpha", type=float, default=30.0)
    p.add_argument("--crf-theta-beta", type=float, default=13.0)


def _crf_from(args):
    return CrfParams(
        iterations=args.crf_iters,
        w_smooth=args.crf_wsmooth,
        theta_gamma=args.crf_theta_gamma,
        w_appear=args.crf_wappear,
        theta_alpha=args.crf_theta_alpha,
        theta_beta=args.crf_theta_beta,
    )


def _fh_from(args):
    return FhParams(sigma=args.sigma, k=args.k, min_size=args.min_size)


def build_parser():
    parser = argparse.ArgumentParser(prog="mcof")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    _add_common(p)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)

    p = sub.add_parser("superpixel", help="segment one image into superpixels")
    _add_common(p)
    _add_fh(p, min_size=50)
    p.add_argument("--image", required=True)

    p = sub.add_parser("seed", help="extract initial seeds for one image")
    _add_common(p)
    _add_fh(p)
    p.add_argument("--image", required=True)
    p.add_argument("--heatmap", action="append", required=True,
                   metavar="CLASS:PATH")
    p.add_argument("--tau-fg", type=float, default=0.7)
    p.add_argument("--tau-bg", type=float, default=0.3)
    p.add_argument("--absolute-fg", action="store_true")

    p = sub.add_parser("train-region", help="train the region classifier")
    _add_common(p)
    _add_fh(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", type=int, default=21)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--tau-fg", type=float, default=0.7)
    p.add_argument("--tau-bg", type=float, default=0.3)

    p = sub.add_parser("refine", help="saliency-refine one single-class image")
    _add_common(p)
    _add_crf(p)
    p.add_argument("--image", required=True)
    p.add_argument("--object-mask", required=True,
                   help="label PNG with the mined object regions")
    p.add_argument("--saliency", required=True)
    p.add_argument("--bins", type=int, default=8)

    p = sub.add_parser("train-pixel", help="train the pixel labeler on masks")
    _add_common(p)
    _add_fh(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", type=int, default=21)
    p.add_argument("--supervision-dir", required=True,
                   help="directory of <stem>.png supervision masks")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--lr", type=float, default=0.2)

    p = sub.add_parser("predict", help="predict masks with trained pixel params")
    _add_common(p)
    _add_fh(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--restrict-labels", action="store_true")

    p = sub.add_parser("run", help="run the full iterative loop")
    _add_common(p)
    _add_fh(p)
    _add_crf(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", type=int, default=21)
    p.add_argument("--mode", choices=["mcof", "direct"], default="mcof")
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--no-saliency", action="store_true")
    p.add_argument("--region-epochs", type=int, default=300)
    p.add_argument("--pixel-epochs", type=int, default=120)
    p.add_argument("--early-stop-change", type=float, default=None)

    p = sub.add_parser("eval", help="evaluate predicted masks against GT")
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", type=int, default=21)
    p.add_argument("--pred-dir", required=True,
                   help="directory of <stem>.png predictions")

    p = sub.add_parser("overlay", help="blend a mask over an image")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    return parser


def _cmd_synth(args):
    spec = SyntheticSpec(n_images=args.n, size=args.size, n_object_classes=args.classes)
    manifest = generate_synthetic_dataset(spec, args.seed, args.out)
    print(f"wrote {len(manifest)} images to {args.out}")


def _cmd_superpixel(args):
    sp = segment(load_png(args.image), _fh_from(args))
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    save_superpixels(sp, os.path.join(args.out, f"{stem}.regions.f32r"),
                     os.path.join(args.out, f"{stem}.adjacency.txt"))
    print(f"{sp.region_count} regions")


def _parse_heatmaps(specs):
    heatmaps = {}
    for spec in specs:
        cls, _, path = spec.partition(":")
        try:
            c = int(cls)
        except ValueError as e:
            raise ValidationError(f"bad --heatmap {spec!r}, want CLASS:PATH") from e
        heatmaps[c] = load_scalar_raster(path)
    return heatmaps


def _cmd_seed(args):
    image = load_png(args.image)
    sp = segment(image, _fh_from(args))
    params = SeedParams(tau_fg=args.tau_fg, tau_bg=args.tau_bg,
                        relative_fg=not args.absolute_fg)
    seeds = extract_seeds(sp, _parse_heatmaps(args.heatmap), params)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    with open(os.path.join(args.out, f"{stem}.seeds.txt"), "w", encoding="utf-8") as f:
        for r, lab in enumerate(seeds.labels):
            f.write(f"{r} {lab}\n")
    save_png(render_region_labels(sp, seeds.labels),
             os.path.join(args.out, f"{stem}.seeds.png"))
    print(f"seeded {int((seeds.labels > 0).sum())} object regions")


def _cmd_train_region(args):
    manifest = load_manifest(args.manifest, class_count=args.classes)
    bundle = loop_mod.load_bundle(manifest, _fh_from(args))
    seed_params = SeedParams(tau_fg=args.tau_fg, tau_bg=args.tau_bg)
    seeds = [
        extract_seeds(sp, hm, seed_params, image_labels=labels)
        for sp, hm, labels in zip(bundle.superpixels, bundle.heatmaps, bundle.labels)
    ]
    cfg = RegionTrainConfig(epochs=args.epochs, lr=args.lr, hidden=args.hidden,
                            seed=args.seed)
    params, log = loop_mod.train_region_classifier(
        bundle.region_features, seeds, args.classes, cfg
    )
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    save_params(params, args.out)
    print(f"final loss {log.final:.4f} (initial {log.initial:.4f})")


def _cmd_refine(args):
    from .region_model import ObjectRegionSet, extract_features
    from .saliency_refine import refine as refine_fn
    from .seeding import seeds_from_mask
    import numpy as np

    image = load_png(args.image)
    sp = segment(image, FhParams(sigma=0.8, k=100.0, min_size=10))
    mask = load_png(args.object_mask)
    region_labels = seeds_from_mask(sp, mask).labels
    region_labels[region_labels < 0] = 0
    classes = sorted(set(int(c) for c in np.unique(region_labels)) - {0})
    if len(classes) != 1:
        raise ValidationError(f"object mask must carry exactly one class, got {classes}")
    n_regions = sp.region_count
    posteriors = np.zeros((n_regions, max(classes) + 1))
    object_regions = ObjectRegionSet(labels=region_labels, posteriors=posteriors)
    crf = _crf_from(args).scaled_for(image.width, image.height)
    result = refine_fn(image, sp, object_regions, load_scalar_raster(args.saliency),
                       classes[0], crf, bins=args.bins)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    save_scalar_raster(result.posterior, os.path.join(args.out, f"{stem}.posterior.f32r"))
    save_png(render_region_labels(sp, result.labels),
             os.path.join(args.out, f"{stem}.refined.png"))
    print(f"refined foreground regions: {int((result.labels > 0).sum())}")


def _cmd_train_pixel(args):
    manifest = load_manifest(args.manifest, class_count=args.classes)
    bundle = loop_mod.load_bundle(manifest, _fh_from(args))
    supervisions = []
    for entry in manifest.entries:
        path = os.path.join(args.supervision_dir, f"{entry.stem}.png")
        raster = load_png(path)
        if not isinstance(raster, LabelRaster):
            raise ValidationError(f"{path}: expected a label PNG")
        supervisions.append(raster)
    cfg = PixelTrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed)
    params, log = loop_mod.train_pixel_classifier(
        bundle.pixel_features, supervisions, args.classes, cfg
    )
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    save_params(params, args.out)
    print(f"final loss {log.final:.4f} (initial {log.initial:.4f})")


def _cmd_predict(args):
    manifest = load_manifest(args.manifest)
    bundle = loop_mod.load_bundle(manifest, _fh_from(args))
    params = load_params(args.params)
    os.makedirs(args.out, exist_ok=True)
    for i, entry in enumerate(manifest.entries):
        allowed = entry.labels if args.restrict_labels else None
        mask = predict_mask(bundle.images[i], bundle.superpixels[i], params,
                            features=bundle.pixel_features[i],
                            allowed_classes=allowed)
        save_png(mask, os.path.join(args.out, f"{entry.stem}.png"))
    print(f"wrote {len(manifest)} masks to {args.out}")


def _cmd_run(args):
    manifest = load_manifest(args.manifest, class_count=args.classes)
    config = loop_mod.LoopConfig(
        max_iterations=args.iters,
        use_saliency=not args.no_saliency,
        mode=args.mode,
        seed=args.seed,
        fh=_fh_from(args),
        crf=_crf_from(args),
        region_cfg=RegionTrainConfig(epochs=args.region_epochs),
        pixel_cfg=PixelTrainConfig(epochs=args.pixel_epochs),
        early_stop_change=args.early_stop_change,
        out_dir=args.out,
    )
    runner = loop_mod.run_mcof if args.mode == "mcof" else loop_mod.run_direct_iterative
    history = runner(manifest, config)
    for state in history:
        parts = [f"iter {state.t}"]
        for stage in ("seeds", "regionnet", "refined", "pixelnet"):
            if stage in state.metrics and state.metrics[stage] is not None:
                parts.append(f"{stage}={state.metrics[stage]:.4f}")
        print("  ".join(parts))


def _cmd_eval(args):
    manifest = load_manifest(args.manifest, class_count=args.classes)
    preds, gts = [], []
    for entry in manifest.entries:
        if entry.gt_path is None:
            continue
        pred = load_png(os.path.join(args.pred_dir, f"{entry.stem}.png"))
        gt = load_png(entry.gt_path)
        preds.append(pred)
        gts.append(gt)
    report = evaluate(preds, gts, args.classes)
    for c in sorted(report.per_class_iou):
        print(f"class {c}: IoU {report.per_class_iou[c]:.4f}")
    print(f"mIoU {report.miou:.4f}")


def _cmd_overlay(args):
    image = load_png(args.image)
    mask = load_png(args.mask)
    if isinstance(image, LabelRaster) or isinstance(mask, ImageRaster):
        raise ValidationError("--image must be RGB and --mask a label PNG")
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    save_png(render_overlay(image, mask), args.out)


_COMMANDS = {
    "synth": _cmd_synth,
    "superpixel": _cmd_superpixel,
    "seed": _cmd_seed,
    "train-region": _cmd_train_region,
    "refine": _cmd_refine,
    "train-pixel": _cmd_train_pixel,
    "predict": _cmd_predict,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "overlay": _cmd_overlay,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code not in (0, None) else EXIT_OK
    try:
        _COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except McofError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
