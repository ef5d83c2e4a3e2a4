"""Classifier parameter files: a short header plus concatenated F32R blocks."""

import os
import struct

import numpy as np

from .errors import FormatError, IoError
from .nnet import MlpParams
from .rasters import F32R_MAGIC, _F32R_HEADER

PARAMS_MAGIC = b"MCPB"
_HEADER = struct.Struct("<4sI")


def _write_block(f, array):
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 1:
        a = a[None, :]
    h, w = a.shape
    f.write(_F32R_HEADER.pack(F32R_MAGIC, w, h, 1))
    f.write(a.tobytes(order="C"))


def _read_block(f, path):
    header = f.read(_F32R_HEADER.size)
    if len(header) < _F32R_HEADER.size:
        raise FormatError(f"{path}: truncated parameter block")
    magic, w, h, c = _F32R_HEADER.unpack(header)
    if magic != F32R_MAGIC or c != 1:
        raise FormatError(f"{path}: bad parameter block header")
    payload = f.read(4 * w * h)
    if len(payload) != 4 * w * h:
        raise FormatError(f"{path}: truncated parameter block payload")
    a = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
    return a[0] if h == 1 else a


def save_params(params: MlpParams, path):
    blocks = list(params.weights) + list(params.biases)
    blocks += [params.feat_mean, params.feat_std]
    if any(b is None for b in blocks):
        raise FormatError("cannot save params without feature statistics")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(PARAMS_MAGIC, len(blocks)))
        for b in blocks:
            _write_block(f, b)
    os.replace(tmp, path)


def load_params(path) -> MlpParams:
    if not os.path.exists(path):
        raise IoError(f"no such file: {path}")
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, n = _HEADER.unpack(header)
        if magic != PARAMS_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if n not in (4, 6):
            raise FormatError(f"{path}: unexpected block count {n}")
        blocks = [_read_block(f, path) for _ in range(n)]
    n_layers = (n - 2) // 2
    weights = [np.atleast_2d(blocks[i]) for i in range(n_layers)]
    biases = [np.atleast_1d(blocks[n_layers + i]) for i in range(n_layers)]
    return MlpParams(
        weights=weights,
        biases=biases,
        feat_mean=np.atleast_1d(blocks[-2]),
        feat_std=np.atleast_1d(blocks[-1]),
    )
