"""Lowering of CONV training steps into 1-D row-convolution instructions.

Forward rows become SRC jobs (sparse input row * dense kernel row), GTA rows
become MSRC jobs (sparse dO row * reversed kernel row, with the forward
activation mask telling the PE which outputs to skip) and GTW rows become
OSRC jobs (sparse dO row against sparse input row, K results kept in a
scratchpad).

Index mapping shared by all three ops, with stride ``s`` and alignment
``a`` (the layer padding): input element ``x`` meets output ``o`` through
tap ``k`` iff ``s*o + k - a == x``.

Text dump format, one instruction per line::

    OP layer dst src taps align stride [mask]

Row references print as ``<tensor><i>.<j>...``: ``O1.3`` is row 3 of output
channel 1, ``W+2.0.1`` kernel row 1 of filter 2 / channel 0 read reversed,
``M0.4`` mask row 4 of input channel 0.  Forward-pass source rows that fall
in the zero padding keep their out-of-range row index (``I0.-1``).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .nn.network import CONV, LayerSpec
from .tensor import conv_output_size

SRC, MSRC, OSRC = "SRC", "MSRC", "OSRC"


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class RowRef:
    tensor: str
    index: tuple

    def __str__(self):
        return self.tensor + ".".join(str(i) for i in self.index)


def ref(tensor: str, *index: int) -> RowRef:
    return RowRef(tensor, tuple(int(i) for i in index))


@dataclass(frozen=True)
class RowInstruction:
    op: str
    layer: int
    dst: RowRef
    src: RowRef              # streamed operand (Port-1)
    taps: RowRef             # kernel row, or the cached dO row for OSRC
    k: int
    align: int
    stride: int
    mask: RowRef | None = None
    first: bool = False      # first job into dst: SRC seeds Reg-2 with the bias, OSRC clears it
    padding: bool = False    # src row lies entirely in the zero padding

    def __str__(self):
        line = f"{self.op} {self.layer} {self.dst} {self.src} {self.taps} {self.align} {self.stride}"
        return f"{line} {self.mask}" if self.mask is not None else line


def _require_conv(layer: LayerSpec):
    if layer.kind != CONV:
        raise CompileError(f"cannot lower a {layer.kind} layer onto the PE array")


def lower_forward(layer: LayerSpec, layer_id: int, in_shape) -> list[RowInstruction]:
    """One SRC per (filter, output row, input channel, kernel row)."""
    _require_conv(layer)
    _, h, _ = in_shape
    ho = conv_output_size(h, layer.k, layer.stride, layer.pad)
    out = []
    for i in range(layer.out_channels):
        for y in range(ho):
            for j in range(layer.in_channels):
                for ky in range(layer.k):
                    r = layer.stride * y + ky - layer.pad
                    out.append(RowInstruction(
                        SRC, layer_id, ref("O", i, y), ref("I", j, r), ref("W", i, j, ky),
                        layer.k, layer.pad, layer.stride,
                        first=(j == 0 and ky == 0), padding=not 0 <= r < h))
    return out


def lower_gta(layer: LayerSpec, layer_id: int, in_shape, mask=None, mask_required: bool = False):
    """MSRCs accumulating dI_j[u] over (dO row, reversed kernel row) pairs.

    ``mask`` is the (C, H, W) boolean pattern of nonzero forward inputs.
    Jobs whose mask row is entirely false are dropped.
    """
    _require_conv(layer)
    if mask is None and mask_required:
        raise CompileError(f"layer {layer_id}: GTA needs the forward ReLU mask of its input")
    c, h, w = in_shape
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (c, h, w):
            raise CompileError(f"layer {layer_id}: mask shape {mask.shape} != input shape {(c, h, w)}")
    s, pad, k = layer.stride, layer.pad, layer.k
    ho = conv_output_size(h, k, s, pad)
    out = []
    for j in range(c):
        for u in range(h):
            if mask is not None and not mask[j, u].any():
                continue
            mref = ref("M", j, u) if mask is not None else None
            first = True
            for i in range(layer.out_channels):
                for ky in range(k):
                    num = u + pad - ky
                    if num % s or not 0 <= num // s < ho:
                        continue
                    out.append(RowInstruction(
                        MSRC, layer_id, ref("dI", j, u), ref("dO", i, num // s), ref("W+", i, j, ky),
                        k, pad, s, mask=mref, first=first))
                    first = False
    return out


def lower_gtw(layer: LayerSpec, layer_id: int, in_shape) -> list[RowInstruction]:
    """OSRCs of (dO_i[y], I_j[s*y+ky-pad]) into the K-wide scratchpad dW_{i,j}[ky]."""
    _require_conv(layer)
    _, h, _ = in_shape
    ho = conv_output_size(h, layer.k, layer.stride, layer.pad)
    out = []
    for i in range(layer.out_channels):
        for j in range(layer.in_channels):
            for ky in range(layer.k):
                for y in range(ho):
                    r = layer.stride * y + ky - layer.pad
                    out.append(RowInstruction(
                        OSRC, layer_id, ref("dW", i, j, ky), ref("I", j, r), ref("dO", i, y),
                        layer.k, layer.pad, layer.stride, first=(y == 0), padding=not 0 <= r < h))
    return out


@dataclass
class Schedule:
    n_groups: int
    queues: list                                   # per group: instructions in issue order
    stages: list = field(default_factory=list)     # (layer, op) in execution order
    edges: list = field(default_factory=list)      # (producer stage, consumer stage)

    def group_of(self) -> dict:
        return {ins.dst: g for g, q in enumerate(self.queues) for ins in q}

    @property
    def n_instructions(self) -> int:
        return sum(len(q) for q in self.queues)


def schedule(instrs, n_groups: int) -> Schedule:
    """Deal destination rows round-robin over PE groups.

    Every job into one destination row lands on the same group and keeps its
    lowering order there, so accumulation order never depends on the
    partition.  Stages are chained by barrier edges in lowering order.
    """
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    queues = [[] for _ in range(n_groups)]
    assign: dict = {}
    stages: list = []
    for ins in instrs:
        key = (ins.layer, ins.op, ins.dst)
        if key not in assign:
            assign[key] = len(assign) % n_groups
        queues[assign[key]].append(ins)
        stage = (ins.layer, ins.op)
        if not stages or stages[-1] != stage:
            stages.append(stage)
    edges = list(zip(stages, stages[1:]))
    return Schedule(n_groups, queues, stages, edges)


def dump(instrs) -> str:
    return "".join(f"{ins}\n" for ins in instrs)


def op_counts(instrs) -> Counter:
    return Counter(ins.op for ins in instrs)
