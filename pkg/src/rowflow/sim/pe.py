"""Processing element: functional execution and analytic timing of row ops.

Timing per instruction (one PE, one instruction at a time):

* SRC   ``K + nnz(input row)`` -- K cycles to load the kernel row into
  Reg-1 from Port-2, then one streamed nonzero per cycle, each multiplied by
  all K taps in parallel.
* MSRC  ``K + contributing operands`` -- look-ahead on Port-1 skips every
  operand whose products all land on masked-off outputs at no cost.
* OSRC  ``1 + sum over chunks (K + I nonzeros meeting the chunk)`` -- the
  dO row is cut into aligned K-position chunks whose nonzeros are cached in
  Reg-1 together; each nonempty chunk streams only the input nonzeros that
  meet a cached value.  Zeroing any operand never adds cycles.

Only products landing on real (in-bounds, unmasked) outputs count as MAC
events.  In dense mode every row is streamed in full; forward and GTW input
rows include their zero padding, so a dense SRC performs exactly
``K * W_out`` multiplies.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..compiler import RowInstruction
from ..tensor import ConfigurationError, SparseRowVector

MASK_WORD_BITS = 32


class UsageError(RuntimeError):
    pass


@dataclass
class EventTally:
    buffer_read: int = 0      # values read from the global buffer
    buffer_write: int = 0     # values written to the global buffer
    reg_access: int = 0
    mac: int = 0
    ppu_op: int = 0

    def __iadd__(self, other: "EventTally"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def __add__(self, other: "EventTally") -> "EventTally":
        out = EventTally(**self.as_dict())
        out += other
        return out

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def energy(self, costs: dict) -> float:
        return float(sum(getattr(self, name) * costs[name] for name in self.as_dict()))


class PE:
    """Reg-1 holds up to ``k_max`` cached operands, Reg-2 the partial results."""

    def __init__(self, k_max: int):
        self.k_max = k_max
        self.reg1 = np.zeros(0)
        self.reg2 = np.zeros(0)

    def load_reg1(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size > self.k_max:
            raise ConfigurationError(f"{values.size} cached operands exceed Reg-1 capacity {self.k_max}")
        self.reg1 = values


def _pairs(x: np.ndarray, k: int, stride: int, align: int, out_len: int):
    """All (operand position, tap, output) triples with s*o + tap - align == x,
    tap-major so each output sees its taps in ascending order."""
    xs, taps, outs = [], [], []
    for t in range(k):
        num = x + align - t
        ok = (num % stride == 0) & (num >= 0)
        o = num // stride
        ok &= o < out_len
        idx = np.flatnonzero(ok)
        xs.append(idx)
        taps.append(np.full(idx.size, t))
        outs.append(o[idx])
    return np.concatenate(xs), np.concatenate(taps), np.concatenate(outs)


def exec_src(pe: PE, instr: RowInstruction, input_row: SparseRowVector, taps, dst: np.ndarray,
             dense: bool = False):
    """Sparse row convolution: dst[o] += taps[t] * I[x] for s*o + t - a == x."""
    pe.load_reg1(taps)
    k, out_len = pe.reg1.size, dst.size
    tally = EventTally()
    if instr.padding and not dense:
        return dst.copy(), 0, tally
    pe.reg2 = dst.copy()
    if not instr.padding:
        x = input_row.offsets
        pos, t, o = _pairs(x, k, instr.stride, instr.align, out_len)
        for tap in range(k):
            sel = t == tap
            pe.reg2[o[sel]] += pe.reg1[tap] * input_row.values[pos[sel]]
        macs = pos.size
    if dense:
        streamed = input_row.logical_length + 2 * instr.align
        macs = k * out_len
    else:
        streamed = input_row.nnz
    tally.reg_access = k + macs
    tally.mac = macs
    tally.buffer_read = k + streamed
    return pe.reg2.copy(), k + streamed, tally


def exec_msrc(pe: PE, instr: RowInstruction, input_row: SparseRowVector, taps, dst: np.ndarray,
              mask_row=None, dense: bool = False):
    """Masked sparse row convolution for GTA.

    ``taps`` is the kernel row as stored (W[ky, :]); the PE reads it reversed
    from Port-2, which is the same as pairing operand x with tap kx at output
    s*x + kx - a.  Outputs whose mask bit is false are never written.
    """
    if instr.mask is not None and mask_row is None and not dense:
        raise UsageError(f"{instr}: mask row missing")
    pe.load_reg1(taps)
    k, out_len = pe.reg1.size, dst.size
    pe.reg2 = dst.copy()
    tally = EventTally()
    x = input_row.offsets
    # dI[v] += dO[x] * W[kx] with v = s*x + kx - a
    pos_list, tap_list, out_list = [], [], []
    for kx in range(k):
        v = instr.stride * x + kx - instr.align
        ok = (v >= 0) & (v < out_len)
        idx = np.flatnonzero(ok)
        pos_list.append(idx)
        tap_list.append(np.full(idx.size, kx))
        out_list.append(v[idx])
    pos, t, v = np.concatenate(pos_list), np.concatenate(tap_list), np.concatenate(out_list)
    masked = mask_row is not None and not dense
    if masked:
        keep = np.asarray(mask_row, dtype=bool)[v]
        pos, t, v = pos[keep], t[keep], v[keep]
    for kx in range(k):
        sel = t == kx
        pe.reg2[v[sel]] += pe.reg1[kx] * input_row.values[pos[sel]]
    if dense:
        streamed = input_row.logical_length
    else:
        streamed = np.unique(pos).size
    mask_words = -(-out_len // MASK_WORD_BITS) if masked else 0
    tally.mac = pos.size
    tally.reg_access = k + pos.size + mask_words
    tally.buffer_read = k + streamed
    return pe.reg2.copy(), k + streamed, tally


def _union_size(starts: np.ndarray, k: int) -> int:
    """Size of the union of the length-``k`` windows starting at sorted ``starts``."""
    if starts.size == 0:
        return 0
    return int(np.minimum(np.diff(starts), k).sum()) + k


def exec_osrc(pe: PE, instr: RowInstruction, d_out_row: SparseRowVector, input_row: SparseRowVector | None,
              in_len: int, scratch: np.ndarray, dense: bool = False):
    """Output-store row convolution: scratch[k] += sum_x dO[x] * I[s*x + k - a].

    ``input_row`` is None when the instruction reads a padding row.  The dO
    row is cut into aligned chunks of K positions; a chunk's nonzeros are
    cached in Reg-1 together (K cycles), then the I nonzeros that meet at
    least one cached value stream past, one per cycle.
    """
    k, s, a = instr.k, instr.stride, instr.align
    if k > pe.k_max:
        raise ConfigurationError(f"kernel size {k} exceeds Reg-1 capacity {pe.k_max}")
    pe.reg2 = scratch.copy()
    tally = EventTally()
    if instr.padding and not dense:
        return pe.reg2.copy(), 0, tally
    offs, vals = d_out_row.offsets, d_out_row.values
    i_offs = input_row.offsets if input_row is not None else np.zeros(0, dtype=np.int64)
    i_vals = input_row.values if input_row is not None else np.zeros(0)
    chunk_ids = np.unique(offs // k)
    macs = streamed = 0
    for c in chunk_ids:
        sel = (offs // k) == c
        chunk, cvals = offs[sel], vals[sel]
        pe.load_reg1(cvals)
        starts = s * chunk - a
        tap = i_offs[:, None] - starts[None, :]          # (I nonzero, cached value)
        meets = (tap >= 0) & (tap < k)
        hit = meets.any(axis=1)
        streamed += int(hit.sum())
        for xi in np.flatnonzero(hit):
            ok = meets[xi]
            pe.reg2[tap[xi, ok]] += pe.reg1[ok] * i_vals[xi]
            macs += int(ok.sum())
    if dense:
        # every position, chunk by chunk, against the padded row
        n = d_out_row.logical_length
        n_chunks = -(-n // k)
        windows = sum(_union_size(s * np.arange(c0, min(n, c0 + k)), k) for c0 in range(0, n, k))
        tally.mac = k * n
        tally.buffer_read = n + windows
    else:
        n_chunks = chunk_ids.size
        windows = streamed
        tally.mac = macs
        tally.buffer_read = d_out_row.nnz + streamed
    tally.reg_access = n_chunks * k + tally.mac
    return pe.reg2.copy(), 1 + n_chunks * k + windows, tally
