"""Raster types, PNG / F32R file formats, class palette and dataset manifests.

Conventions: label value 0 is background, 1..C-1 are object classes and 255
marks ignored pixels. Float rasters holding probabilities live in [0, 1].
All loaders are pure; returned arrays are marked read-only so rasters can be
shared freely across threads.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    FormatError,
    IoError,
    MissingFileError,
    ParseError,
)

IGNORE = 255
DEFAULT_CLASS_COUNT = 21

F32R_MAGIC = b"F32R"
_F32R_HEADER = struct.Struct("<4sIII")
_MAX_DIM = 1 << 24


def _freeze(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ImageRaster:
    """8-bit RGB image, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise FormatError("ImageRaster expects (H, W, 3) uint8 data")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise FormatError("empty image")
        _freeze(d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel class ids, shape (height, width), uint8; 255 = ignore."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 2 or d.dtype != np.uint8:
            raise FormatError("LabelRaster expects (H, W) uint8 data")
        _freeze(d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def check_class_range(self, class_count):
        vals = self.data[self.data != IGNORE]
        if vals.size and int(vals.max()) >= class_count:
            raise FormatError(
                f"label value {int(vals.max())} outside [0, {class_count})"
            )


@dataclass(frozen=True)
class ScalarRaster:
    """Single-channel float32 raster, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 2 or d.dtype != np.float32:
            raise FormatError("ScalarRaster expects (H, W) float32 data")
        if not np.isfinite(d).all():
            raise FormatError("ScalarRaster contains NaN/Inf")
        _freeze(d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def voc_palette(class_count=DEFAULT_CLASS_COUNT):
    """Standard VOC color map: 256 RGB triples, bit-reversal construction."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = (r, g, b)
    pal[IGNORE] = (224, 224, 192)
    return pal


def load_png(path):
    """Load a PNG as ImageRaster (RGB) or LabelRaster (gray / palette)."""
    if not os.path.exists(path):
        raise IoError(f"no such file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError as e:
        raise FormatError(f"{path}: not a readable image ({e})") from e
    except OSError as e:
        raise IoError(f"{path}: {e}") from e
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG, got {img.format}")
    if img.mode == "RGB":
        return ImageRaster(np.asarray(img, dtype=np.uint8))
    if img.mode in ("L", "P"):
        # Palette images decode to raw indices, which are the class ids.
        return LabelRaster(np.asarray(img, dtype=np.uint8))
    raise FormatError(f"{path}: unsupported PNG mode {img.mode}")


def save_png(raster, path, palette=None):
    """Write a raster as PNG. LabelRasters get a palette (VOC by default)."""
    if isinstance(raster, ImageRaster):
        img = Image.fromarray(np.asarray(raster.data), mode="RGB")
    elif isinstance(raster, LabelRaster):
        img = Image.fromarray(np.asarray(raster.data), mode="P")
        pal = voc_palette() if palette is None else palette
        img.putpalette(pal.astype(np.uint8).reshape(-1).tolist())
    else:
        raise FormatError(f"cannot save {type(raster).__name__} as PNG")
    tmp = f"{path}.tmp{os.getpid()}"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def write_f32r(path, array):
    """Write a float array as F32R: magic, u32 w/h/c LE, then float32 LE."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise FormatError("F32R payload must be 2-D or 3-D")
    h, w, c = a.shape
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(_F32R_HEADER.pack(F32R_MAGIC, w, h, c))
        f.write(a.tobytes(order="C"))
    os.replace(tmp, path)


def read_f32r(path):
    """Read an F32R file; returns (H, W) for 1 channel else (H, W, C)."""
    if not os.path.exists(path):
        raise IoError(f"no such file: {path}")
    with open(path, "rb") as f:
        header = f.read(_F32R_HEADER.size)
        if len(header) < _F32R_HEADER.size:
            raise FormatError(f"{path}: truncated F32R header")
        magic, w, h, c = _F32R_HEADER.unpack(header)
        if magic != F32R_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if not (1 <= w < _MAX_DIM and 1 <= h < _MAX_DIM and 1 <= c <= 4096):
            raise FormatError(f"{path}: implausible dimensions {w}x{h}x{c}")
        payload = f.read(4 * w * h * c)
    if len(payload) != 4 * w * h * c:
        raise FormatError(f"{path}: truncated F32R payload")
    a = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return a[:, :, 0] if c == 1 else a


def load_scalar_raster(path, probability=True):
    """Load a ScalarRaster from F32R or 8-bit gray PNG (scaled by 1/255)."""
    if str(path).endswith(".png"):
        raster = load_png(path)
        if not isinstance(raster, LabelRaster):
            raise FormatError(f"{path}: gray PNG expected for scalar raster")
        data = raster.data.astype(np.float32) / 255.0
    else:
        data = read_f32r(path)
        if data.ndim != 2:
            raise FormatError(f"{path}: scalar raster must have 1 channel")
        data = np.array(data, dtype=np.float32)
    if probability:
        data = np.clip(data, 0.0, 1.0)
    return ScalarRaster(data)


def save_scalar_raster(raster, path):
    write_f32r(path, raster.data)


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    labels: tuple  # sorted object class ids, each in [1, C)
    heatmap_paths: dict  # class id -> path
    saliency_path: str | None
    gt_path: str | None

    @property
    def stem(self):
        return os.path.splitext(os.path.basename(self.image_path))[0]


@dataclass(frozen=True)
class DatasetManifest:
    entries: list
    class_count: int = DEFAULT_CLASS_COUNT
    root: str = field(default=".")

    def __len__(self):
        return len(self.entries)


def load_manifest(path, class_count=DEFAULT_CLASS_COUNT):
    """Parse a pipe-separated manifest and validate referenced files exist.

    Line format: image | class ids | heatmap paths (aligned) | saliency|- | gt|-
    Paths are resolved relative to the manifest's directory.
    """
    if not os.path.exists(path):
        raise IoError(f"no such file: {path}")
    root = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(root, p)

    entries = []
    missing = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [fld.strip() for fld in line.split("|")]
            if len(fields) != 5:
                raise ParseError(f"expected 5 fields, got {len(fields)}", line_no)
            image_f, labels_f, heatmaps_f, sal_f, gt_f = fields
            if not image_f:
                raise ParseError("empty image path", line_no)
            if not labels_f:
                raise ParseError("empty label field", line_no)
            try:
                labels = [int(tok) for tok in labels_f.split(",") if tok.strip() != ""]
            except ValueError as e:
                raise ParseError(f"bad class id: {e}", line_no) from e
            if not labels:
                raise ParseError("empty label field", line_no)
            for c in labels:
                if not (1 <= c < class_count):
                    raise ParseError(f"class id {c} outside [1, {class_count})", line_no)
            if len(set(labels)) != len(labels):
                raise ParseError("duplicate class id", line_no)
            heatmaps = [tok for tok in heatmaps_f.split(",") if tok.strip() != ""]
            if len(heatmaps) != len(labels):
                raise ParseError(
                    f"{len(labels)} class ids but {len(heatmaps)} heatmap paths",
                    line_no,
                )
            image_path = resolve(image_f)
            heatmap_paths = {c: resolve(p) for c, p in zip(labels, heatmaps)}
            sal = resolve(sal_f) if sal_f != "-" else None
            gt = resolve(gt_f) if gt_f != "-" else None
            for p in [image_path, *heatmap_paths.values(), sal, gt]:
                if p is not None and not os.path.exists(p):
                    missing.append(p)
            entries.append(
                ManifestEntry(
                    image_path=image_path,
                    labels=tuple(sorted(labels)),
                    heatmap_paths=heatmap_paths,
                    saliency_path=sal,
                    gt_path=gt,
                )
            )
    if missing:
        raise MissingFileError(missing)
    if not entries:
        raise EmptyDataset(f"{path}: manifest has no entries")
    return DatasetManifest(entries=entries, class_count=class_count, root=root)


def require_same_shape(a, b, what="rasters"):
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch(
            f"{what}: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
