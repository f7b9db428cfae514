"""Post Processing Unit: point-wise work on every row a PE group produces.

One value per cycle.  Per row it optionally applies ReLU (forward) or
stochastic pruning (backward), compresses the row, and updates two
per-channel accumulators: the sum of emitted gradients (bias gradient) and
the sum of pre-pruning magnitudes (threshold determination).
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from ..prune import determine_threshold, estimate_sigma, stochastic_prune
from ..rng import Rng
from ..tensor import SparseRowVector, sparsify
from .pe import EventTally

FORWARD, GTA = "forward", "gta"


class PPU:
    def __init__(self):
        self.grad_sum = defaultdict(float)   # channel -> sum of emitted g
        self.abs_sum = 0.0
        self.count = 0

    def determined_threshold(self, p: float) -> float:
        return determine_threshold(estimate_sigma(self.abs_sum, self.count), p)


def ppu_process(ppu: PPU, row: np.ndarray, mode: str, channel: int | None = None, relu: bool = False,
                tau: float | None = None, rng: Rng | None = None, dense: bool = False):
    """Returns ``(sparse row, mask or None, cycles, events)``.

    In GTA mode ``channel`` selects the bias accumulator; pass None for rows
    that are not a layer's dO (the dI sent upstream).
    """
    row = np.asarray(row, dtype=np.float64)
    tally = EventTally(ppu_op=row.size)
    mask = None
    if mode == FORWARD:
        if relu:
            mask = row > 0
            row = np.where(mask, row, 0.0)
    elif mode == GTA:
        ppu.abs_sum += float(np.abs(row).sum())
        ppu.count += row.size
        if tau is not None and not dense:
            row = stochastic_prune(row, tau, rng)
        if channel is not None:
            ppu.grad_sum[channel] += float(row.sum())
        tally.reg_access = 2 * row.size if channel is not None else row.size
    else:
        raise ValueError(f"unknown PPU mode {mode!r}")
    out: SparseRowVector = sparsify(row)
    tally.buffer_write = row.size if dense else out.nnz
    return out, mask, row.size, tally
