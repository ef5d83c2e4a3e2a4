"""mIoU evaluation from an accumulated pixel confusion matrix, overlay
rendering and per-iteration CSV reports."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyDataset
from .rasters import IGNORE, ImageRaster, LabelRaster, voc_palette


@dataclass(frozen=True)
class IouReport:
    per_class_iou: dict  # class id -> IoU, only classes present in GT or pred
    miou: float
    confusion: np.ndarray  # (C, C) counts, rows = GT, cols = prediction


def confusion_matrix(predictions, ground_truth, class_count) -> np.ndarray:
    conf = np.zeros((class_count, class_count), dtype=np.int64)
    for pred, gt in zip(predictions, ground_truth):
        if (pred.height, pred.width) != (gt.height, gt.width):
            raise DimensionMismatch(
                f"prediction {pred.width}x{pred.height} vs gt {gt.width}x{gt.height}"
            )
        g = gt.data.ravel().astype(np.int64)
        p = pred.data.ravel().astype(np.int64)
        keep = g != IGNORE
        g, p = g[keep], p[keep]
        if (g >= class_count).any() or (p >= class_count).any():
            raise DimensionMismatch("label outside class range")
        conf += np.bincount(
            g * class_count + p, minlength=class_count ** 2
        ).reshape(class_count, class_count)
    return conf


def report_from_confusion(conf) -> IouReport:
    class_count = conf.shape[0]
    tp = np.diag(conf).astype(np.float64)
    gt_total = conf.sum(axis=1).astype(np.float64)
    pred_total = conf.sum(axis=0).astype(np.float64)
    union = gt_total + pred_total - tp
    per_class = {}
    for c in range(class_count):
        if union[c] > 0:  # absent from both GT and prediction -> excluded
            per_class[c] = float(tp[c] / union[c])
    miou = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return IouReport(per_class_iou=per_class, miou=miou, confusion=conf)


def evaluate(predictions, ground_truth, class_count) -> IouReport:
    """Per-class IoU and mIoU over paired label rasters; GT IGNORE pixels are
    excluded; classes absent from both sides are excluded from the mean."""
    predictions, ground_truth = list(predictions), list(ground_truth)
    if not predictions or len(predictions) != len(ground_truth):
        raise EmptyDataset(
            f"{len(predictions)} predictions vs {len(ground_truth)} ground truths"
        )
    return report_from_confusion(
        confusion_matrix(predictions, ground_truth, class_count)
    )


def render_overlay(image: ImageRaster, mask: LabelRaster, palette=None,
                   alpha=0.5) -> ImageRaster:
    """Alpha-blend palette colors over the image; background stays clear."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise DimensionMismatch("image vs mask")
    pal = voc_palette() if palette is None else palette
    colors = pal[mask.data]
    blend = np.floor(
        (1 - alpha) * image.data.astype(np.float64)
        + alpha * colors.astype(np.float64)
        + 0.5
    ).astype(np.uint8)
    fg = (mask.data != 0) & (mask.data != IGNORE)
    out = np.where(fg[:, :, None], blend, image.data)
    return ImageRaster(out.astype(np.uint8))


def write_metrics_csv(rows, path):
    """Rows of (iteration, stage, miou) -> CSV with a fixed float format."""
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "stage", "miou"])
        for it, stage, miou in rows:
            writer.writerow([it, stage, "" if miou is None else f"{miou:.6f}"])
    os.replace(tmp, path)


def emit_iteration_report(history, out_dir, class_count, images=None):
    """Write metrics.csv (iteration, stage, mIoU rows) plus overlay PNGs.

    Returns (rows, pixelnet_nondecreasing flag or None). Histories lacking
    ground-truth metrics still produce overlays; mIoU cells are left empty.
    """
    from .rasters import save_png  # local import avoids cycle at module load

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    pixel_curve = []
    have_metrics = True
    for state in history:
        metrics = state.metrics or {}
        if not metrics:
            have_metrics = False
        for stage in ("seeds", "regionnet", "refined", "pixelnet"):
            if stage == "refined" and state.t > 0:
                continue
            if stage in ("seeds", "regionnet", "refined") and state.object_regions is None:
                continue
            rows.append((state.t, stage, metrics.get(stage)))
        if "pixelnet" in metrics:
            pixel_curve.append(metrics["pixelnet"])
    write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))

    if images is not None:
        for state in history:
            overlay_dir = os.path.join(out_dir, f"iter{state.t}_overlays")
            os.makedirs(overlay_dir, exist_ok=True)
            for i, (img, mask) in enumerate(zip(images, state.masks)):
                save_png(render_overlay(img, mask), os.path.join(overlay_dir, f"{i:04d}.png"))

    nondecreasing = None
    if have_metrics and len(pixel_curve) >= 2:
        nondecreasing = all(
            b >= a for a, b in zip(pixel_curve[:-1], pixel_curve[1:])
        )
    return rows, nondecreasing
