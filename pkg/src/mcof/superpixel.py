"""Felzenszwalb-Huttenlocher graph-based superpixel segmentation.

Merging runs on the 8-connected pixel grid with Euclidean RGB edge weights;
final regions and the adjacency graph are 4-connected. Edges are processed
in (weight, source, target) order so the output is fully deterministic.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionMismatch, ValidationError
from .rasters import ImageRaster, ScalarRaster, write_f32r


@dataclass(frozen=True)
class FhParams:
    sigma: float = 0.8
    k: float = 100.0
    min_size: int = 50

    def __post_init__(self):
        if self.sigma < 0 or self.k <= 0 or self.min_size < 1:
            raise ValidationError(f"bad FhParams: {self}")


@dataclass
class SuperpixelMap:
    region_id: np.ndarray  # (H, W) int32, dense ids in [0, region_count)
    region_count: int
    adjacency: frozenset  # unordered (a, b) pairs, a < b
    region_pixels: list  # flat pixel index array per region
    _neighbors: list = field(default=None, repr=False)

    @property
    def height(self):
        return self.region_id.shape[0]

    @property
    def width(self):
        return self.region_id.shape[1]

    def neighbors(self, r):
        if self._neighbors is None:
            nbrs = [[] for _ in range(self.region_count)]
            for a, b in sorted(self.adjacency):
                nbrs[a].append(b)
                nbrs[b].append(a)
            self._neighbors = [np.array(sorted(n), dtype=np.int64) for n in nbrs]
        return self._neighbors[r]


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)
        self.rank = np.zeros(n, dtype=np.int32)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x):
        p = self.parent
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra


def _grid_edges(h, w, offsets):
    """Edges (src, dst) between pixels at the given (dy, dx) offsets."""
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    srcs, dsts = [], []
    for dy, dx in offsets:
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        yt = slice(max(0, dy), h + min(0, dy))
        xt = slice(max(0, dx), w + min(0, dx))
        srcs.append(idx[ys, xs].ravel())
        dsts.append(idx[yt, xt].ravel())
    return np.concatenate(srcs), np.concatenate(dsts)


def _dense_relabel(root_map):
    """Map arbitrary ids to dense ids ordered by first row-major occurrence."""
    flat = root_map.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))  # rank of each unique id by first pos
    return order[inverse].reshape(root_map.shape).astype(np.int32), len(uniq)


def segment(image: ImageRaster, params: FhParams = FhParams()) -> SuperpixelMap:
    """Segment an image into superpixels with the FH graph-merge criterion."""
    h, w = image.height, image.width
    rgb = image.data.astype(np.float64)
    if params.sigma > 0:
        rgb = np.stack(
            [gaussian_filter(rgb[:, :, c], params.sigma, mode="nearest") for c in range(3)],
            axis=2,
        )

    src, dst = _grid_edges(h, w, [(0, 1), (1, 0), (1, 1), (1, -1)])
    flat = rgb.reshape(-1, 3)
    weights = np.sqrt(((flat[src] - flat[dst]) ** 2).sum(axis=1))
    order = np.lexsort((dst, src, weights))
    src, dst, weights = src[order], dst[order], weights[order]

    uf = _UnionFind(h * w)
    threshold = np.full(h * w, params.k, dtype=np.float64)
    k = params.k
    for e in range(len(weights)):
        a = uf.find(src[e])
        b = uf.find(dst[e])
        if a == b:
            continue
        wgt = weights[e]
        if wgt <= threshold[a] and wgt <= threshold[b]:
            r = uf.union(a, b)
            threshold[r] = wgt + k / uf.size[r]

    if params.min_size > 1:
        for e in range(len(weights)):
            a = uf.find(src[e])
            b = uf.find(dst[e])
            if a != b and (uf.size[a] < params.min_size or uf.size[b] < params.min_size):
                uf.union(a, b)

    roots = np.array([uf.find(i) for i in range(h * w)], dtype=np.int64)
    root_map = roots.reshape(h, w)

    # Split merged components into 4-connected regions for the final map.
    region_id = _four_connected_split(root_map)
    region_id, n_regions = _dense_relabel(region_id)

    order = np.argsort(region_id.ravel(), kind="stable")
    counts = np.bincount(region_id.ravel(), minlength=n_regions)
    region_pixels = np.split(order, np.cumsum(counts)[:-1])

    adjacency = _four_adjacency(region_id)
    return SuperpixelMap(
        region_id=region_id,
        region_count=n_regions,
        adjacency=adjacency,
        region_pixels=region_pixels,
    )


def _four_connected_split(root_map):
    h, w = root_map.shape
    uf = _UnionFind(h * w)
    src, dst = _grid_edges(h, w, [(0, 1), (1, 0)])
    flat = root_map.ravel()
    same = flat[src] == flat[dst]
    for a, b in zip(src[same], dst[same]):
        uf.union(a, b)
    return np.array([uf.find(i) for i in range(h * w)], dtype=np.int64).reshape(h, w)


def _four_adjacency(region_id):
    h, w = region_id.shape
    flat = region_id.ravel()
    src, dst = _grid_edges(h, w, [(0, 1), (1, 0)])
    a, b = flat[src], flat[dst]
    diff = a != b
    lo = np.minimum(a[diff], b[diff])
    hi = np.maximum(a[diff], b[diff])
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return frozenset((int(p), int(q)) for p, q in pairs)


def average_raster_per_region(sp: SuperpixelMap, raster: ScalarRaster) -> np.ndarray:
    """Per-region mean of a scalar raster."""
    if (sp.height, sp.width) != (raster.height, raster.width):
        raise DimensionMismatch(
            f"superpixel map {sp.width}x{sp.height} vs raster "
            f"{raster.width}x{raster.height}"
        )
    ids = sp.region_id.ravel()
    sums = np.bincount(ids, weights=raster.data.ravel().astype(np.float64),
                       minlength=sp.region_count)
    counts = np.bincount(ids, minlength=sp.region_count)
    return sums / counts


def save_superpixels(sp: SuperpixelMap, f32r_path, adjacency_path):
    """Region ids as a 1-channel F32R plus an 'a b' per-line adjacency file."""
    write_f32r(f32r_path, sp.region_id.astype(np.float32))
    lines = [f"{a} {b}\n" for a, b in sorted(sp.adjacency)]
    with open(adjacency_path, "w", encoding="utf-8") as f:
        f.writelines(lines)
