import numpy as np
import pytest

from mcof.rasters import ImageRaster, LabelRaster, ScalarRaster
from mcof.superpixel import SuperpixelMap


def make_superpixel_map(region_id):
    """Build a SuperpixelMap directly from a dense (H, W) region-id grid."""
    region_id = np.asarray(region_id, dtype=np.int32)
    n = int(region_id.max()) + 1
    flat = region_id.ravel()
    region_pixels = [np.nonzero(flat == r)[0] for r in range(n)]
    h, w = region_id.shape
    pairs = set()
    for y in range(h):
        for x in range(w):
            for dy, dx in ((0, 1), (1, 0)):
                yy, xx = y + dy, x + dx
                if yy < h and xx < w and region_id[y, x] != region_id[yy, xx]:
                    a, b = int(region_id[y, x]), int(region_id[yy, xx])
                    pairs.add((min(a, b), max(a, b)))
    return SuperpixelMap(
        region_id=region_id,
        region_count=n,
        adjacency=frozenset(pairs),
        region_pixels=region_pixels,
    )


def image_of(color, h=8, w=8):
    data = np.zeros((h, w, 3), dtype=np.uint8)
    data[:, :] = color
    return ImageRaster(data)


def labels_of(values):
    return LabelRaster(np.asarray(values, dtype=np.uint8))


def scalar_of(values):
    return ScalarRaster(np.asarray(values, dtype=np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
