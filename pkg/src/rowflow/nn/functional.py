"""Point-wise and pooling layers, batch norm and the loss head.

All functions act on a whole batch: activations are ``(B, C, H, W)``.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def relu_forward(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(d_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, d_out, 0.0)


def maxpool_forward(x: np.ndarray, window: int, stride: int):
    """Window max with first-maximum tie breaking.

    Returns the pooled output and, per output element, the flat index
    ``row * W + col`` of the selected input element within its channel plane.
    """
    b, c, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    best = np.full((b, c, ho, wo), -np.inf)
    arg = np.zeros((b, c, ho, wo), dtype=np.int64)
    oy = np.arange(ho) * stride
    ox = np.arange(wo) * stride
    # raster order over the window so that strict '>' keeps the lowest flat index
    for dy in range(window):
        for dx in range(window):
            vals = x[:, :, oy[:, None] + dy, ox[None, :] + dx]
            better = vals > best
            best = np.where(better, vals, best)
            flat = (oy[:, None] + dy) * w + (ox[None, :] + dx)
            arg = np.where(better, flat, arg)
    return best, arg


def maxpool_backward(d_out: np.ndarray, argmax: np.ndarray, in_shape) -> np.ndarray:
    b, c, h, w = in_shape
    d_in = np.zeros((b, c, h * w))
    bi, ci = np.meshgrid(np.arange(b), np.arange(c), indexing="ij")
    flat_b = np.broadcast_to(bi[:, :, None], (b, c, argmax[0, 0].size))
    flat_c = np.broadcast_to(ci[:, :, None], (b, c, argmax[0, 0].size))
    np.add.at(d_in, (flat_b, flat_c, argmax.reshape(b, c, -1)), d_out.reshape(b, c, -1))
    return d_in.reshape(in_shape)


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Training-mode BN over batch and spatial axes, per channel.

    The variance is floored at ``BN_EPS`` (not offset by it), so unit-variance
    input passes through unchanged and a constant channel maps to ``beta``.
    """
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    floored = var < BN_EPS
    inv_std = 1.0 / np.sqrt(np.where(floored, BN_EPS, var))
    xhat = (x - mean) * inv_std
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, {"xhat": xhat, "inv_std": inv_std, "floored": floored}


def batchnorm_backward(d_out: np.ndarray, gamma: np.ndarray, cache: dict):
    xhat, inv_std, floored = cache["xhat"], cache["inv_std"], cache["floored"]
    m = d_out.shape[0] * d_out.shape[2] * d_out.shape[3]
    d_gamma = (d_out * xhat).sum(axis=(0, 2, 3))
    d_beta = d_out.sum(axis=(0, 2, 3))
    dxhat = d_out * gamma[None, :, None, None]
    mean_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True) / m
    # the variance term vanishes where the floor is active
    mean_dxhat_xhat = np.where(floored, 0.0, (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / m)
    d_in = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return d_in, d_gamma, d_beta


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Per-sample cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    losses = -logp[np.arange(n), labels]
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return losses, grad
