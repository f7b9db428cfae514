"""Datasets: synthetic Gaussian class blobs and IDX file I/O."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..rng import Rng


class FormatError(ValueError):
    pass


_CENTERS = ((2.0, 2.0), (2.0, 5.0), (5.0, 3.5), (5.5, 1.5), (1.0, 6.5))


def synthetic_blobs(n: int, rng: Rng, size: int = 8, n_classes: int = 3,
                    jitter: float = 1.2, width: float = 1.3, noise: float = 0.25):
    """``n`` 1 x size x size images of a jittered Gaussian bump, one centre per
    class, plus noise; the background is clipped to exact zeros and peaks to 1."""
    if n_classes > len(_CENTERS):
        raise ValueError(f"at most {len(_CENTERS)} classes")
    labels = rng.integers(n_classes, n)
    scale = (size - 1) / 7.0
    centers = np.array(_CENTERS[:n_classes]) * scale
    c = centers[labels] + jitter * scale * rng.normal(2 * n).reshape(n, 2)
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[None] - c[:, 0, None, None]) ** 2 + (xx[None] - c[:, 1, None, None]) ** 2
    img = np.exp(-d2 / (2.0 * (width * scale) ** 2))
    img = img + noise * rng.normal(n * size * size).reshape(n, size, size)
    img = np.clip((img - 0.2) / 0.8, 0.0, 1.0)
    return img[:, None, :, :], labels


_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for IDX header at byte offset {len(raw)}")
    zero, type_code, ndim = raw[0:2], raw[2], raw[3]
    if zero != b"\x00\x00" or type_code not in _TYPES:
        raise FormatError(f"{path}: bad IDX magic 0x{raw[:4].hex()} at byte offset 0")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension block at byte offset {len(raw)}, "
                          f"expected {header} header bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = np.dtype(_TYPES[type_code])
    expected = header + int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: payload size mismatch at byte offset {header}: "
                          f"expected {expected} bytes in total, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array)
    codes = {np.dtype(v).newbyteorder("="): k for k, v in _TYPES.items()}
    code = codes.get(array.dtype.newbyteorder("="))
    if code is None:
        raise FormatError(f"dtype {array.dtype} has no IDX type code")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(_TYPES[code]).tobytes())


def load_idx(images_path, labels_path):
    """Images scaled to [0, 1] as (N, 1, H, W) float64; labels as int64."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected 3 dimensions (N, H, W), got {images.ndim}")
    if labels.shape != (images.shape[0],):
        raise FormatError(f"{labels_path}: {labels.shape[0] if labels.ndim else 0} labels "
                          f"for {images.shape[0]} images")
    x = images.astype(np.float64)
    if images.dtype.kind in "ui":
        x = x / 255.0
    elif x.size and (x.min() < 0.0 or x.max() > 1.0):
        lo, hi = x.min(), x.max()
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return x[:, None], labels.astype(np.int64)
