"""Mean-field inference on a fully connected CRF with Gaussian pairwise
kernels (Potts compatibility), used to binarize/sharpen probability rasters.

Message passing is exact: the spatial kernel is applied via separable 1-D
Gaussian matrices, the bilateral kernel via blockwise dense products. This
quadratic formulation targets desk-scale images (<= 128x128).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .rasters import ImageRaster, LabelRaster, ScalarRaster

_UNARY_FLOOR = 1e-10


@dataclass(frozen=True)
class CrfParams:
    iterations: int = 5
    w_smooth: float = 3.0
    theta_gamma: float = 3.0
    w_appear: float = 5.0
    theta_alpha: float = 30.0
    theta_beta: float = 13.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        for name in ("theta_gamma", "theta_alpha", "theta_beta"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.w_smooth < 0 or self.w_appear < 0:
            raise ValidationError("kernel weights must be >= 0")

    def scaled_for(self, width, height):
        """Shrink the bilateral spatial stddev for small images."""
        alpha = max(min(width, height) / 8.0, 1.0)
        return replace(self, theta_alpha=min(self.theta_alpha, alpha))


def _axis_kernel(n, theta):
    d = np.arange(n, dtype=np.float64)
    return np.exp(-((d[:, None] - d[None, :]) ** 2) / (2.0 * theta ** 2))


def _spatial_message(q, gy, gx):
    # Separable exact sum: K((y,x),(y',x')) = gy[y,y'] * gx[x,x']; the
    # self term equals q itself since g(0) = 1, so subtract it afterwards.
    out = np.einsum("ab,bwl->awl", gy, q)
    out = np.einsum("cd,adl->acl", gx, out)
    return out - q


def _bilateral_message(q_flat, positions, colors, params, block=1024):
    n, n_labels = q_flat.shape
    inv_a = 1.0 / (2.0 * params.theta_alpha ** 2)
    inv_b = 1.0 / (2.0 * params.theta_beta ** 2)
    out = np.empty_like(q_flat)
    for start in range(0, n, block):
        stop = min(start + block, n)
        dp = ((positions[start:stop, None, :] - positions[None, :, :]) ** 2).sum(-1)
        dc = ((colors[start:stop, None, :] - colors[None, :, :]) ** 2).sum(-1)
        kern = np.exp(-dp * inv_a - dc * inv_b)
        kern[np.arange(start, stop) - start, np.arange(start, stop)] = 0.0
        out[start:stop] = kern @ q_flat
    return out


def mean_field(unary, image: ImageRaster, params: CrfParams = CrfParams()):
    """Run mean-field updates on (H, W, L) unary probabilities.

    iterations=0 returns the unary unchanged; every output row is a valid
    distribution.
    """
    unary = np.asarray(unary, dtype=np.float64)
    if unary.ndim != 3 or unary.shape[2] < 2:
        raise DimensionMismatch("unary must be (H, W, L) with L >= 2")
    h, w, n_labels = unary.shape
    if (image.height, image.width) != (h, w):
        raise DimensionMismatch(
            f"unary {w}x{h} vs image {image.width}x{image.height}"
        )
    if params.iterations == 0:
        return unary.copy()

    neg_log_unary = -np.log(np.maximum(unary, _UNARY_FLOOR))
    gy = _axis_kernel(h, params.theta_gamma)
    gx = _axis_kernel(w, params.theta_gamma)
    ys, xs = np.mgrid[0:h, 0:w]
    positions = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
    colors = image.data.reshape(-1, 3).astype(np.float64)

    q = unary.copy()
    for _ in range(params.iterations):
        message = np.zeros_like(q)
        if params.w_smooth > 0:
            message += params.w_smooth * _spatial_message(q, gy, gx)
        if params.w_appear > 0:
            bi = _bilateral_message(q.reshape(-1, n_labels), positions, colors, params)
            message += params.w_appear * bi.reshape(h, w, n_labels)
        # Potts: the pairwise energy of label l sums messages of all other labels.
        pairwise = message.sum(axis=2, keepdims=True) - message
        energy = neg_log_unary + pairwise
        energy -= energy.min(axis=2, keepdims=True)
        q = np.exp(-energy)
        q /= q.sum(axis=2, keepdims=True)
    return q


def binarize(prob: ScalarRaster, image: ImageRaster,
             params: CrfParams = CrfParams()) -> LabelRaster:
    """Two-class mean field on (1-p, p) unaries; ties go to background."""
    p = prob.data.astype(np.float64)
    unary = np.stack([1.0 - p, p], axis=2)
    q = mean_field(unary, image, params)
    fg = q[:, :, 1] > q[:, :, 0]
    return LabelRaster(fg.astype(np.uint8))
