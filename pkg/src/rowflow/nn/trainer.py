"""Forward, backward (GTA + GTW) and SGD for the layer graph in ``network``.

Convolutions run one sample at a time through the tensor-core references,
so every CONV result here has a 1:1 counterpart in the row dataflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..prune import PruneConfig, ThresholdPredictor, predictor_step
from ..rng import Rng, subseed
from ..tensor import ConfigurationError, conv2d_full_ref, conv2d_gtw_ref, conv2d_ref
from . import functional as fn
from .network import BATCHNORM, CONV, CONV_BN_RELU, CONV_RELU, FC, FLATTEN, MAXPOOL, RELU, NetworkSpec


class UsageError(RuntimeError):
    pass


@dataclass
class ForwardContext:
    inputs: list                               # input activation of every layer, (B, ...)
    relu_masks: dict = field(default_factory=dict)
    pool_argmax: dict = field(default_factory=dict)
    bn_cache: dict = field(default_factory=dict)


@dataclass
class Gradients:
    params: dict                               # layer index -> {"W": ..., "b": ...} sums over the batch
    d_inputs: dict                             # layer index -> dI leaving the layer (B, ...)
    d_outputs: dict = field(default_factory=dict)   # CONV index -> dO consumed by GTA/GTW
    targets: dict = field(default_factory=dict)     # CONV index -> pruning target before pruning


class Pruner:
    """Per-CONV-layer threshold predictors with layer-derived random streams."""

    def __init__(self, net: NetworkSpec, config: PruneConfig, seed: int):
        self.config = config
        self.predictors = {i: ThresholdPredictor(config.fifo_depth) for i in net.conv_indices}
        self.rngs = {i: Rng(subseed(seed, f"prune/layer{i}")) for i in net.conv_indices}
        self.last_tau = {i: None for i in net.conv_indices}

    def step(self, idx: int, batch_grads: np.ndarray) -> np.ndarray:
        pred = self.predictors[idx]
        out = predictor_step(pred, list(batch_grads), self.config.p, self.rngs[idx])
        self.last_tau[idx] = pred.fifo[-1]
        return np.stack(out)


def forward(net: NetworkSpec, params: dict, batch: np.ndarray):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != net.input_shape:
        raise ConfigurationError(f"batch shape {batch.shape[1:]} != network input {net.input_shape}")
    ctx = ForwardContext(inputs=[])
    x = batch
    for idx, layer in enumerate(net.layers):
        ctx.inputs.append(x)
        if layer.kind == CONV:
            p = params[idx]
            x = np.stack([conv2d_ref(s, p["W"], p["b"], layer.stride, layer.pad) for s in x])
        elif layer.kind == RELU:
            x, mask = fn.relu_forward(x)
            ctx.relu_masks[idx] = mask
        elif layer.kind == MAXPOOL:
            x, arg = fn.maxpool_forward(x, layer.window, layer.stride)
            ctx.pool_argmax[idx] = arg
        elif layer.kind == BATCHNORM:
            x, cache = fn.batchnorm_forward(x, params[idx]["gamma"], params[idx]["beta"])
            ctx.bn_cache[idx] = cache
        elif layer.kind == FLATTEN:
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == FC:
            x = x @ params[idx]["W"].T + params[idx]["b"]
    return x, ctx


def backward(net: NetworkSpec, params: dict, ctx: ForwardContext | None, loss_grad: np.ndarray,
             pruner: Pruner | None = None) -> Gradients:
    """Backpropagate ``loss_grad`` (dLoss/dlogits per sample).

    Parameter gradients are summed over the batch.  With a pruner, CONV-RELU
    layers prune the dI they send upstream and CONV-BN-RELU layers prune the
    dO they receive; each pruner call covers the whole batch.
    """
    if ctx is None or len(ctx.inputs) != len(net.layers):
        raise UsageError("backward needs the context of a forward pass over the same batch")
    grads = Gradients(params={}, d_inputs={})
    g = np.asarray(loss_grad, dtype=np.float64)
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        x = ctx.inputs[idx]
        if layer.kind == FC:
            p = params[idx]
            grads.params[idx] = {"W": g.T @ x, "b": g.sum(axis=0)}
            g = g @ p["W"]
        elif layer.kind == FLATTEN:
            g = g.reshape(x.shape)
        elif layer.kind == BATCHNORM:
            g, dgamma, dbeta = fn.batchnorm_backward(g, params[idx]["gamma"], ctx.bn_cache[idx])
            grads.params[idx] = {"gamma": dgamma, "beta": dbeta}
        elif layer.kind == RELU:
            g = fn.relu_backward(g, ctx.relu_masks[idx])
        elif layer.kind == MAXPOOL:
            g = fn.maxpool_backward(g, ctx.pool_argmax[idx], x.shape)
        elif layer.kind == CONV:
            g = _conv_backward(net, params, idx, x, g, grads, pruner)
        grads.d_inputs[idx] = g
    return grads


def _conv_backward(net, params, idx, x, d_out, grads, pruner):
    layer = net.layers[idx]
    w = params[idx]["W"]
    structure = net.structure(idx) if pruner is not None else None
    if structure == CONV_BN_RELU:
        grads.targets[idx] = d_out
        d_out = pruner.step(idx, d_out)
    grads.d_outputs[idx] = d_out
    dw = np.zeros_like(w)
    db = np.zeros(w.shape[0])
    d_in = np.empty_like(x)
    for b in range(x.shape[0]):
        dwb, dbb = conv2d_gtw_ref(d_out[b], x[b], layer.k, layer.stride, layer.pad)
        dw += dwb
        db += dbb
        d_in[b] = conv2d_full_ref(d_out[b], w, x.shape[1:], layer.stride, layer.pad)
    grads.params[idx] = {"W": dw, "b": db}
    if structure == CONV_RELU and idx > 0:
        if net.input_masked(idx):
            # the upstream ReLU zeroes these anyway; masking first keeps the
            # pruned stream identical to what the masked row convolutions emit
            d_in = np.where(x != 0, d_in, 0.0)
        grads.targets[idx] = d_in
        d_in = pruner.step(idx, d_in)
    return d_in


def sgd_step(params: dict, grads: dict, lr: float, batch_size: int) -> dict:
    """w <- w - lr * (sum of per-sample gradients) / batch_size."""
    scale = lr / batch_size
    return {idx: {name: value - scale * grads[idx][name] for name, value in p.items()}
            for idx, p in params.items()}


def loss_and_grad(net: NetworkSpec, params: dict, batch: np.ndarray, labels: np.ndarray):
    logits, ctx = forward(net, params, batch)
    losses, dlogits = fn.softmax_xent(logits, labels)
    return losses, dlogits, logits, ctx


def evaluate(net: NetworkSpec, params: dict, x: np.ndarray, y: np.ndarray):
    """Mean loss and accuracy, with batch statistics taken over all of ``x``."""
    logits, _ = forward(net, params, x)
    losses, _ = fn.softmax_xent(logits, y)
    return float(losses.mean()), float((logits.argmax(axis=1) == y).mean())


def density(a: np.ndarray) -> float:
    return float(np.count_nonzero(a)) / a.size if a.size else 0.0


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    densities: dict       # CONV index -> mean dO density over the epoch
    taus: dict            # CONV index -> last determined threshold (None without pruning)


def train(net: NetworkSpec, params: dict, x: np.ndarray, y: np.ndarray, epochs: int, seed: int,
          prune: PruneConfig | None = None, callback=None, pruner: Pruner | None = None):
    """Minibatch SGD.  Returns final params and one ``EpochMetrics`` per epoch.

    Pass ``pruner`` to reuse (and keep) threshold state across calls.
    """
    shuffle_rng = Rng(subseed(seed, "shuffle"))
    n = x.shape[0]
    bs = net.batch_size
    n_batches = (n // bs) * epochs
    if pruner is None and prune is not None:
        prune.check_batches(n_batches)
        pruner = Pruner(net, prune, subseed(seed, "prune"))
    history = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        nnz = {i: 0 for i in net.conv_indices}
        size = {i: 0 for i in net.conv_indices}
        for start in range(0, n - bs + 1, bs):
            sel = order[start:start + bs]
            _, dlogits, _, ctx = loss_and_grad(net, params, x[sel], y[sel])
            grads = backward(net, params, ctx, dlogits, pruner)
            for i in net.conv_indices:
                nnz[i] += np.count_nonzero(grads.d_outputs[i])
                size[i] += grads.d_outputs[i].size
            params = sgd_step(params, grads.params, net.lr, bs)
        loss, acc = evaluate(net, params, x, y)
        metrics = EpochMetrics(
            epoch=epoch + 1, loss=loss, accuracy=acc,
            densities={i: nnz[i] / size[i] if size[i] else 0.0 for i in net.conv_indices},
            taus=dict(pruner.last_tau) if pruner else {i: None for i in net.conv_indices},
        )
        history.append(metrics)
        if callback is not None:
            callback(metrics)
    return params, history
