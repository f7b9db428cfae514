"""Tensor containers, the compressed row format and reference convolutions.

Activations are numpy float64 arrays shaped ``(C, H, W)``; kernels are
``(F, C, K, K)`` with a separate length-``F`` bias.  The three reference
convolutions are the functional oracles every other module is checked
against, so they are written as plain strided loops over kernel taps with a
fixed accumulation order: bias first, then input channel, kernel row, kernel
column, all ascending.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Inconsistent shapes or parameters."""


@dataclass(frozen=True)
class SparseRowVector:
    logical_length: int
    offsets: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if offs.shape != vals.shape or offs.ndim != 1:
            raise ConfigurationError("offsets and values must be 1-D and equally long")
        if offs.size:
            if offs[0] < 0 or offs[-1] >= self.logical_length or np.any(np.diff(offs) <= 0):
                raise ConfigurationError("offsets must be strictly increasing within the row")
            if np.any(vals == 0):
                raise ConfigurationError("stored values must be nonzero")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "values", vals)

    @property
    def nnz(self) -> int:
        return int(self.offsets.size)

    def densify(self) -> np.ndarray:
        return densify(self)


@dataclass(frozen=True)
class BitMask:
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))

    @property
    def length(self) -> int:
        return int(self.bits.size)


def sparsify(row) -> SparseRowVector:
    row = np.asarray(row, dtype=np.float64)
    row = row + 0.0  # -0.0 becomes +0.0
    offs = np.flatnonzero(row)
    return SparseRowVector(row.size, offs, row[offs])


def densify(srow: SparseRowVector) -> np.ndarray:
    out = np.zeros(srow.logical_length)
    out[srow.offsets] = srow.values
    return out


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ConfigurationError(f"kernel {k} larger than padded input {size + 2 * pad}")
    return span // stride + 1


def _check_common(k: int, stride: int, pad: int):
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    if pad < 0:
        raise ConfigurationError("pad must be >= 0")
    if k < 1:
        raise ConfigurationError("kernel size must be >= 1")


def _tap_window(k_off: int, out_size: int, in_size: int, stride: int, pad: int):
    """Output range [lo, hi) whose input index stride*o + k_off - pad is in bounds,
    plus the first such input index."""
    shift = k_off - pad
    lo = 0 if shift >= 0 else (-shift + stride - 1) // stride
    hi = min(out_size, (in_size - 1 - shift) // stride + 1) if in_size - 1 - shift >= 0 else 0
    return lo, max(lo, hi), stride * lo + shift


def conv2d_ref(x: np.ndarray, weight: np.ndarray, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """O_i[y, x] = b_i + sum_{j,ky,kx} W[i,j,ky,kx] * I_j[s*y+ky-pad, s*x+kx-pad]."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4:
        raise ConfigurationError("expected input (C,H,W) and kernels (F,C,K,K)")
    f, c, k, k2 = weight.shape
    _check_common(k, stride, pad)
    if k != k2 or c != x.shape[0]:
        raise ConfigurationError(f"kernel shape {weight.shape} does not match input {x.shape}")
    _, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    out = np.zeros((f, ho, wo))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (f,):
            raise ConfigurationError(f"bias must have shape ({f},)")
        out += bias[:, None, None]
    for j in range(c):
        for ky in range(k):
            ylo, yhi, iy0 = _tap_window(ky, ho, h, stride, pad)
            if ylo >= yhi:
                continue
            rows = slice(iy0, iy0 + stride * (yhi - ylo - 1) + 1, stride)
            for kx in range(k):
                xlo, xhi, ix0 = _tap_window(kx, wo, w, stride, pad)
                if xlo >= xhi:
                    continue
                cols = slice(ix0, ix0 + stride * (xhi - xlo - 1) + 1, stride)
                out[:, ylo:yhi, xlo:xhi] += weight[:, j, ky, kx][:, None, None] * x[j, rows, cols][None]
    return out


def conv2d_full_ref(d_out: np.ndarray, weight: np.ndarray, in_shape, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Gradient to activations: scatter dO through the (rotated) kernels.

    ``in_shape`` is the forward input shape ``(C, H, W)``; it is required
    because strided forward passes lose the trailing input rows/columns.
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    f, c, k, _ = weight.shape
    _check_common(k, stride, pad)
    cin, h, w = in_shape
    if cin != c:
        raise ConfigurationError(f"kernel channels {c} != input channels {cin}")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if d_out.shape != (f, ho, wo):
        raise ConfigurationError(f"dO shape {d_out.shape} != forward output shape {(f, ho, wo)}")
    d_in = np.zeros((c, h, w))
    for i in range(f):
        for ky in range(k):
            ylo, yhi, iy0 = _tap_window(ky, ho, h, stride, pad)
            if ylo >= yhi:
                continue
            rows = slice(iy0, iy0 + stride * (yhi - ylo - 1) + 1, stride)
            for kx in range(k):
                xlo, xhi, ix0 = _tap_window(kx, wo, w, stride, pad)
                if xlo >= xhi:
                    continue
                cols = slice(ix0, ix0 + stride * (xhi - xlo - 1) + 1, stride)
                d_in[:, rows, cols] += weight[i, :, ky, kx][:, None, None] * d_out[i, ylo:yhi, xlo:xhi][None]
    return d_in


def conv2d_gtw_ref(d_out: np.ndarray, x: np.ndarray, k: int, stride: int = 1, pad: int = 0):
    """Gradient to weights.  Returns ``(dW, db)`` with dW shaped (F, C, K, K)."""
    d_out = np.asarray(d_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_common(k, stride, pad)
    c, h, w = x.shape
    f = d_out.shape[0]
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if d_out.shape != (f, ho, wo):
        raise ConfigurationError(f"dO shape {d_out.shape} != forward output shape {(f, ho, wo)}")
    dw = np.zeros((f, c, k, k))
    for ky in range(k):
        ylo, yhi, iy0 = _tap_window(ky, ho, h, stride, pad)
        if ylo >= yhi:
            continue
        rows = slice(iy0, iy0 + stride * (yhi - ylo - 1) + 1, stride)
        for kx in range(k):
            xlo, xhi, ix0 = _tap_window(kx, wo, w, stride, pad)
            if xlo >= xhi:
                continue
            cols = slice(ix0, ix0 + stride * (xhi - xlo - 1) + 1, stride)
            g = d_out[:, ylo:yhi, xlo:xhi].reshape(f, -1)
            patch = x[:, rows, cols].reshape(c, -1)
            dw[:, :, ky, kx] = g @ patch.T
    db = d_out.sum(axis=(1, 2))
    return dw, db
