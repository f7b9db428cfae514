"""Training-step simulation over the PE-group array.

A step runs stage by stage with a barrier between stages: forward SRCs for
every CONV layer in order, then for every CONV layer in reverse the dO
intake through the PPUs (pruning, bias accumulation), GTA MSRCs and GTW
OSRCs.  Inside a stage each group works through its own queue:

    pe cycles     = max(ceil(sum of instruction cycles / pes_per_group),
                        longest instruction)
    group cycles  = max(pe cycles, ppu cycles)          # PPU is pipelined
    stage cycles  = max over groups + ceil(bytes moved / bandwidth)

Host work between CONV layers (BN, pooling, FC, loss) is not simulated; the
host-side tensors arrive in ``LayerStep``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..compiler import (MSRC, OSRC, SRC, RowInstruction, Schedule, lower_forward, lower_gta,
                        lower_gtw, ref, schedule)
from ..nn.network import CONV_BN_RELU, CONV_RELU, LayerSpec
from ..rng import Rng
from ..tensor import SparseRowVector, conv_output_size, sparsify
from .config import ArchConfig
from .pe import PE, EventTally, exec_msrc, exec_osrc, exec_src
from .ppu import FORWARD, GTA, PPU, ppu_process

SPARSE, DENSE = "sparse", "dense"
PHASES = ("forward", "gta", "gtw")
CSV_COLUMNS = ("layer", "step", "mode", "cycles", "mac_events", "buffer_read_bytes",
               "buffer_write_bytes", "reg_accesses", "energy_pj")


class CapacityError(RuntimeError):
    pass


@dataclass
class LayerStep:
    """Operands of one CONV layer for one sample."""
    index: int
    layer: LayerSpec
    x: np.ndarray                     # forward input (C, H, W)
    weight: np.ndarray
    bias: np.ndarray
    d_out: np.ndarray                 # dO from the host, before any pruning (F, Ho, Wo)
    structure: str | None = None
    input_masked: bool = False
    needs_gta: bool = True
    tau: float | None = None          # predicted threshold, None = no pruning
    rng: Rng | None = None

    @property
    def out_shape(self):
        _, h, w = self.x.shape
        lay = self.layer
        return (lay.out_channels, conv_output_size(h, lay.k, lay.stride, lay.pad),
                conv_output_size(w, lay.k, lay.stride, lay.pad))


@dataclass
class PhaseRecord:
    layer: int
    step: str
    cycles: int = 0
    tally: EventTally = field(default_factory=EventTally)


@dataclass
class SimReport:
    mode: str
    arch: ArchConfig
    records: list = field(default_factory=list)
    densities: dict = field(default_factory=dict)   # layer -> {"I": ..., "dO": ...}

    @property
    def cycles(self) -> int:
        return sum(r.cycles for r in self.records)

    @property
    def tally(self) -> EventTally:
        total = EventTally()
        for r in self.records:
            total += r.tally
        return total

    @property
    def energy(self) -> float:
        return self.tally.energy(self.arch.costs_pj)

    def layer_cycles(self, layer: int) -> int:
        return sum(r.cycles for r in self.records if r.layer == layer)

    def rows(self) -> list[dict]:
        bpv = self.arch.bytes_per_value
        out = []

        def row(layer, step, cycles, t):
            return {"layer": layer, "step": step, "mode": self.mode, "cycles": cycles,
                    "mac_events": t.mac, "buffer_read_bytes": t.buffer_read * bpv,
                    "buffer_write_bytes": t.buffer_write * bpv, "reg_accesses": t.reg_access,
                    "energy_pj": f"{t.energy(self.arch.costs_pj):.3f}"}

        for r in self.records:
            out.append(row(r.layer, r.step, r.cycles, r.tally))
        out.append(row("total", "all", self.cycles, self.tally))
        return out

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()


@dataclass
class StepOutputs:
    """Functional results per CONV layer."""
    out: dict = field(default_factory=dict)        # pre-activation O
    act: dict = field(default_factory=dict)        # O after the PPU (ReLU when folded)
    d_out: dict = field(default_factory=dict)      # dO after intake (pruned)
    d_in: dict = field(default_factory=dict)       # dI leaving the layer
    d_weight: dict = field(default_factory=dict)
    d_bias: dict = field(default_factory=dict)
    ppu: dict = field(default_factory=dict)        # layer -> PPU threshold accumulators


def gta_mask(step: LayerStep):
    return (step.x != 0) if step.input_masked else None


def compile_step(steps, n_groups: int, mode: str = SPARSE) -> Schedule:
    instrs: list[RowInstruction] = []
    for st in steps:
        instrs += lower_forward(st.layer, st.index, st.x.shape)
    for st in reversed(steps):
        if st.needs_gta:
            mask = gta_mask(st) if mode == SPARSE else None
            instrs += lower_gta(st.layer, st.index, st.x.shape, mask)
        instrs += lower_gtw(st.layer, st.index, st.x.shape)
    return schedule(instrs, n_groups)


def check_capacity(steps, arch: ArchConfig):
    for st in steps:
        f, ho, wo = st.out_shape
        live = 2 * st.x.size + 2 * f * ho * wo + 2 * st.weight.size + st.bias.size
        need = live * arch.bytes_per_value
        if need > arch.buffer_bytes:
            raise CapacityError(f"layer {st.index}: live set of {need} bytes exceeds the "
                                f"{arch.buffer_bytes}-byte global buffer")


class _Stage:
    def __init__(self, arch: ArchConfig, layer: int, step: str):
        self.arch = arch
        self.record = PhaseRecord(layer, step)
        self.pe = {}            # group -> list of instruction cycles
        self.ppu = {}           # group -> ppu cycles

    def add_pe(self, group, cycles, tally):
        self.pe.setdefault(group, []).append(cycles)
        self.record.tally += tally

    def add_ppu(self, group, cycles, tally):
        self.ppu[group] = self.ppu.get(group, 0) + cycles
        self.record.tally += tally

    def close(self) -> PhaseRecord:
        p = self.arch.pes_per_group
        worst = 0
        for g in set(self.pe) | set(self.ppu):
            jobs = self.pe.get(g, [])
            pe_cycles = max(-(-sum(jobs) // p), max(jobs, default=0))
            worst = max(worst, pe_cycles, self.ppu.get(g, 0))
        t = self.record.tally
        moved = (t.buffer_read + t.buffer_write) * self.arch.bytes_per_value
        self.record.cycles += worst + -(-moved // self.arch.bandwidth)
        return self.record


def _rows_sparse(t: np.ndarray):
    return [[sparsify(r) for r in ch] for ch in t]


def run_step(sched: Schedule, steps, arch: ArchConfig, mode: str = SPARSE):
    """Execute one sample's training step.  Returns ``(SimReport, StepOutputs)``."""
    if mode not in (SPARSE, DENSE):
        raise ValueError(f"unknown mode {mode!r}")
    check_capacity(steps, arch)
    dense = mode == DENSE
    # every job into one destination row sits in one queue, in lowering order,
    # so walking queue by queue preserves each row's accumulation order
    dst_group: dict = {}
    by_stage: dict = {}
    for g, q in enumerate(sched.queues):
        for ins in q:
            dst_group.setdefault((ins.layer, ins.op, ins.dst), g)
            by_stage.setdefault((ins.layer, ins.op), []).append((g, ins))
    report = SimReport(mode, arch)
    outs = StepOutputs()
    pe = PE(arch.k_max)

    def home(layer, op, dst, fallback):
        return dst_group.get((layer, op, dst), fallback % arch.n_groups)

    for st in steps:
        stage = _Stage(arch, st.index, "forward")
        f, ho, wo = st.out_shape
        rows = _rows_sparse(st.x)
        acc = np.repeat(st.bias[:, None, None], ho, axis=1).repeat(wo, axis=2).astype(np.float64)
        for g, ins in by_stage.get((st.index, SRC), []):
            i, y = ins.dst.index
            j, r = ins.src.index
            ky = ins.taps.index[2]
            src_row = rows[j][r] if not ins.padding else SparseRowVector(st.x.shape[2], [], [])
            acc[i, y], cyc, tally = exec_src(pe, ins, src_row, st.weight[i, j, ky], acc[i, y], dense)
            stage.add_pe(g, cyc, tally)
        outs.out[st.index] = acc
        ppu = PPU()
        relu = st.structure == CONV_RELU
        act = np.empty_like(acc)
        for i in range(f):
            for y in range(ho):
                g = home(st.index, SRC, ref("O", i, y), i * ho + y)
                srow, _, cyc, tally = ppu_process(ppu, acc[i, y], FORWARD, relu=relu, dense=dense)
                act[i, y] = srow.densify()
                stage.add_ppu(g, cyc, tally)
        outs.act[st.index] = act
        report.records.append(stage.close())

    for st in reversed(steps):
        f, ho, wo = st.out_shape
        stage = _Stage(arch, st.index, "gta")
        ppu = PPU()
        prune_do = st.structure == CONV_BN_RELU and st.tau is not None
        d_out = np.empty((f, ho, wo))
        for i in range(f):
            for y in range(ho):
                g = (i * ho + y) % arch.n_groups
                srow, _, cyc, tally = ppu_process(ppu, st.d_out[i, y], GTA, channel=i,
                                                  tau=st.tau if prune_do else None, rng=st.rng, dense=dense)
                d_out[i, y] = srow.densify()
                stage.add_ppu(g, cyc, tally)
        outs.d_out[st.index] = d_out
        outs.d_bias[st.index] = np.array([ppu.grad_sum[i] for i in range(f)])
        do_rows = _rows_sparse(d_out)

        if st.needs_gta:
            c, h, w = st.x.shape
            mask = gta_mask(st) if not dense else None
            d_in = np.zeros((c, h, w))
            for g, ins in by_stage.get((st.index, MSRC), []):
                j, u = ins.dst.index
                i, y = ins.src.index
                _, _, ky = ins.taps.index
                mrow = mask[j, u] if mask is not None else None
                d_in[j, u], cyc, tally = exec_msrc(pe, ins, do_rows[i][y], st.weight[i, j, ky],
                                                   d_in[j, u], mrow, dense)
                stage.add_pe(g, cyc, tally)
            gppu = PPU()
            prune_di = st.structure == CONV_RELU and st.tau is not None
            for j in range(c):
                for u in range(h):
                    g = home(st.index, MSRC, ref("dI", j, u), j * h + u)
                    srow, _, cyc, tally = ppu_process(gppu, d_in[j, u], GTA,
                                                      tau=st.tau if prune_di else None, rng=st.rng, dense=dense)
                    d_in[j, u] = srow.densify()
                    stage.add_ppu(g, cyc, tally)
            outs.d_in[st.index] = d_in
            # threshold statistics live with the pruning target
            outs.ppu[st.index] = gppu if st.structure == CONV_RELU else ppu
        else:
            outs.ppu[st.index] = ppu
        report.records.append(stage.close())

        stage = _Stage(arch, st.index, "gtw")
        k = st.layer.k
        dw = np.zeros_like(st.weight)
        x_rows = _rows_sparse(st.x)
        for g, ins in by_stage.get((st.index, OSRC), []):
            i, j, ky = ins.dst.index
            jj, r = ins.src.index
            _, y = ins.taps.index
            irow = None if ins.padding else x_rows[jj][r]
            dw[i, j, ky], cyc, tally = exec_osrc(pe, ins, do_rows[i][y], irow, st.x.shape[2],
                                                 dw[i, j, ky], dense)
            stage.add_pe(g, cyc, tally)
        outs.d_weight[st.index] = dw
        stage.record.tally.buffer_write += dw.size   # scratchpads drain once per step
        report.records.append(stage.close())
        report.densities[st.index] = {"I": _density(st.x), "dO": _density(d_out)}
    return report, outs


def _density(a):
    return float(np.count_nonzero(a)) / a.size if a.size else 0.0


def simulate(steps, arch: ArchConfig, mode: str = SPARSE):
    return run_step(compile_step(steps, arch.n_groups, mode), steps, arch, mode)
