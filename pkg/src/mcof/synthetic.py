"""Deterministic synthetic benchmark: small images of two-part objects.

Each object class has a distinctive "head" color (the discriminative part,
the only thing its heatmap highlights) and a "body" color drawn from a
separate palette. A fraction of head pixels is speckled with the body color
so the seeded part carries a sample of the body appearance, which is what
lets saliency refinement recover whole objects. Saliency maps are blurred
whole-object indicators with noise; ground-truth masks are written alongside.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError
from .rasters import ImageRaster, LabelRaster, load_manifest, save_png, write_f32r

# (head, body) RGB per object class. Heads are saturated primaries; bodies
# use a second palette far from every head, from the background and from
# each other, so body appearance is only tied to its class through
# co-occurrence, not through color similarity with the head.
CLASS_COLORS = [
    ((210, 40, 40), (180, 60, 160)),
    ((40, 70, 210), (60, 180, 180)),
    ((40, 180, 60), (230, 120, 40)),
    ((200, 170, 30), (120, 60, 200)),
]

BACKGROUND_COLOR = (110, 110, 110)


@dataclass(frozen=True)
class SyntheticSpec:
    n_images: int = 40
    size: int = 64
    n_object_classes: int = 4
    multi_class_period: int = 5  # images i with i % period in multi_class_slots
    multi_class_slots: tuple = (1, 2, 4)
    bg_noise: int = 18
    head_noise: int = 8
    body_noise: int = 20
    heatmap_sigma: float = 2.5
    saliency_sigma: float = 2.5
    saliency_noise: float = 0.03
    # Optical blur applied to the rendered image; softens object boundaries
    # into genuine multi-pixel color gradients.
    image_blur_sigma: float = 0.0
    # Per-object body shade jitter: each object's body color is shifted by a
    # uniform offset in [-j, j] per channel, so objects of a class share an
    # appearance family without being pixel-identical across images.
    object_color_jitter: int = 30
    # Fraction of head pixels speckled with the body color, so the
    # discriminative part carries a sample of the common body appearance.
    head_speckle: float = 0.15

    def __post_init__(self):
        if self.n_object_classes > len(CLASS_COLORS):
            raise ValidationError(
                f"at most {len(CLASS_COLORS)} object classes supported"
            )
        if self.n_images < 1 or self.size < 32:
            raise ValidationError("need n_images >= 1 and size >= 32")

    @property
    def class_count(self):
        return self.n_object_classes + 1


def _place_object(rng, size, occupied):
    """Random body rectangle plus a head strip along one body edge."""
    for _ in range(100):
        bw = int(rng.integers(18, 27))
        bh = int(rng.integers(14, 21))
        x0 = int(rng.integers(1, size - bw - 1))
        y0 = int(rng.integers(1, size - bh - 1))
        box = (y0, x0, y0 + bh, x0 + bw)
        if all(
            box[2] + 2 <= o[0] or o[2] + 2 <= box[0]
            or box[3] + 2 <= o[1] or o[3] + 2 <= box[1]
            for o in occupied
        ):
            break
    else:
        return None
    side = int(rng.integers(0, 4))
    hw = int(rng.integers(7, 10))
    hh = int(rng.integers(5, 8))
    if side == 0:  # head strip on the left edge of the body
        head = (y0 + (bh - hh) // 2, x0, hh, hw)
    elif side == 1:  # right
        head = (y0 + (bh - hh) // 2, x0 + bw - hw, hh, hw)
    elif side == 2:  # top
        head = (y0, x0 + (bw - hw) // 2, hh, hw)
    else:  # bottom
        head = (y0 + bh - hh, x0 + (bw - hw) // 2, hh, hw)
    body_mask = np.zeros((size, size), dtype=bool)
    body_mask[y0:y0 + bh, x0:x0 + bw] = True
    head_mask = np.zeros((size, size), dtype=bool)
    hy, hx, hh2, hw2 = head
    head_mask[hy:hy + hh2, hx:hx + hw2] = True
    head_mask &= body_mask
    return box, body_mask, head_mask


def _image_classes(spec, i, rng):
    primary = (i % spec.n_object_classes) + 1
    if i % spec.multi_class_period in spec.multi_class_slots and spec.n_object_classes > 1:
        offset = 1 + int(rng.integers(0, spec.n_object_classes - 1))
        secondary = ((primary - 1 + offset) % spec.n_object_classes) + 1
        return [primary, secondary]
    return [primary]


def _noisy(rng, base, noise, shape):
    vals = np.array(base, dtype=np.float64) + rng.integers(
        -noise, noise + 1, size=shape + (3,)
    )
    return np.clip(vals, 0, 255)


def generate_synthetic_dataset(spec: SyntheticSpec, rng_seed: int, out_dir: str):
    """Write images, ground truth, heatmaps, saliency and a manifest.

    Deterministic per rng_seed; returns the loaded DatasetManifest.
    """
    rng = np.random.default_rng(rng_seed)
    size = spec.size
    for sub in ("images", "gt", "heatmaps", "saliency"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    lines = []
    for i in range(spec.n_images):
        classes = _image_classes(spec, i, rng)
        img = _noisy(rng, BACKGROUND_COLOR, spec.bg_noise, (size, size))
        gt = np.zeros((size, size), dtype=np.uint8)
        head_masks, object_mask = {}, np.zeros((size, size), dtype=bool)
        occupied = []
        placed_classes = []
        for c in classes:
            placed = _place_object(rng, size, occupied)
            if placed is None:
                continue
            box, body_mask, head_mask = placed
            occupied.append(box)
            head_color, body_color = CLASS_COLORS[c - 1]
            jit = spec.object_color_jitter
            eff = np.clip(
                np.array(body_color, dtype=np.float64)
                + rng.integers(-jit, jit + 1, size=3),
                0, 255,
            )
            img[body_mask] = _noisy(rng, eff, spec.body_noise,
                                    (int(body_mask.sum()),))
            n_head = int(head_mask.sum())
            img[head_mask] = _noisy(rng, head_color, spec.head_noise, (n_head,))
            speckle = rng.random(n_head) < spec.head_speckle
            if speckle.any():
                hy, hx = np.nonzero(head_mask)
                img[hy[speckle], hx[speckle]] = _noisy(
                    rng, eff, spec.body_noise, (int(speckle.sum()),)
                )
            gt[body_mask] = c
            head_masks[c] = head_mask
            object_mask |= body_mask
            placed_classes.append(c)
        if not placed_classes:
            raise ValidationError(f"could not place any object in image {i}")

        if spec.image_blur_sigma > 0:
            img = gaussian_filter(img, (spec.image_blur_sigma,
                                        spec.image_blur_sigma, 0))
            img = np.clip(img, 0, 255)

        stem = f"img_{i:03d}"
        save_png(ImageRaster(img.astype(np.uint8)),
                 os.path.join(out_dir, "images", f"{stem}.png"))
        save_png(LabelRaster(gt), os.path.join(out_dir, "gt", f"{stem}.png"))

        hm_fields = []
        for c in placed_classes:
            hm = gaussian_filter(head_masks[c].astype(np.float64), spec.heatmap_sigma)
            hm = 0.9 * hm / hm.max()
            hm_path = os.path.join("heatmaps", f"{stem}_c{c}.f32r")
            write_f32r(os.path.join(out_dir, hm_path), hm.astype(np.float32))
            hm_fields.append(hm_path)

        sal = gaussian_filter(object_mask.astype(np.float64), spec.saliency_sigma)
        sal = 0.95 * sal / sal.max()
        sal += rng.normal(0.0, spec.saliency_noise, sal.shape)
        sal = np.clip(sal, 0.0, 1.0)
        sal_path = os.path.join("saliency", f"{stem}.f32r")
        write_f32r(os.path.join(out_dir, sal_path), sal.astype(np.float32))

        lines.append(
            "|".join(
                [
                    os.path.join("images", f"{stem}.png"),
                    ",".join(str(c) for c in placed_classes),
                    ",".join(hm_fields),
                    sal_path,
                    os.path.join("gt", f"{stem}.png"),
                ]
            )
        )

    manifest_path = os.path.join(out_dir, "manifest.txt")
    tmp = f"{manifest_path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("# synthetic benchmark\n")
        f.writelines(line + "\n" for line in lines)
    os.replace(tmp, manifest_path)
    return load_manifest(manifest_path, class_count=spec.class_count)
