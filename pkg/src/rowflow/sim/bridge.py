"""Extract per-sample CONV operands from a trainer forward/backward pass."""

from __future__ import annotations

from ..nn.network import CONV_BN_RELU, NetworkSpec
from ..nn.trainer import ForwardContext, Gradients
from .engine import LayerStep


def layer_steps(net: NetworkSpec, params: dict, ctx: ForwardContext, grads: Gradients, sample: int,
                taus: dict | None = None, rngs: dict | None = None) -> list[LayerStep]:
    """One ``LayerStep`` per CONV layer for batch element ``sample``.

    dO is taken before pruning; pass the predictor thresholds in ``taus`` and
    positioned random streams in ``rngs`` to have the PPUs prune it.
    """
    steps = []
    for idx in net.conv_indices:
        structure = net.structure(idx)
        if structure == CONV_BN_RELU and idx in grads.targets:
            d_out = grads.targets[idx][sample]
        else:
            d_out = grads.d_outputs[idx][sample]
        steps.append(LayerStep(
            index=idx, layer=net.layers[idx], x=ctx.inputs[idx][sample],
            weight=params[idx]["W"], bias=params[idx]["b"], d_out=d_out,
            structure=structure, input_masked=net.input_masked(idx), needs_gta=idx > 0,
            tau=(taus or {}).get(idx), rng=(rngs or {}).get(idx)))
    return steps
