"""Acceptance criteria 1-9.  Each test prints one PASS/FAIL line.

Run alone with ``python3 tests/test_acceptance.py`` or through pytest.
"""

import copy
import io
import csv
import sys
import time
from pathlib import Path

import numpy as np
import pytest

if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).parent))


from _oracles import ACCEPTANCE_LINES, LOWERING_MATRIX, close_rel, gradient_check, make_step, references, rel_ok  # noqa: E402
from rowflow import experiment as ex  # noqa: E402
from rowflow.nn.network import init_params, toy_network  # noqa: E402
from rowflow.prune import (ThresholdPredictor, determine_threshold, estimate_sigma,  # noqa: E402
                           predictor_step, stochastic_prune)
from rowflow.rng import Rng  # noqa: E402
from rowflow.sim import ArchConfig, simulate  # noqa: E402
from rowflow.tensor import conv_output_size  # noqa: E402

TAU_0 = 1.6449
SEED = 0


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def paired_config(seed=SEED):
    return ex.load_config(None, {"seed": seed, "epochs": 50, "p": 0.9, "fifo_depth": 4})


def training_csv(cfg, runs):
    header, rows = ex.train_rows(cfg, runs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


_CACHE = {}


def paired_runs():
    """The 50-epoch paired run behind criteria 4, 5 and 9, trained once."""
    if "runs" not in _CACHE:
        cfg = paired_config()
        t0 = time.perf_counter()
        runs = ex.run_training(cfg)
        _CACHE["runs"] = (cfg, runs, time.perf_counter() - t0)
    return _CACHE["runs"]


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    net = toy_network()
    rng = Rng(SEED)
    params = init_params(net, rng)
    for p in params.values():     # move off the symmetric init so every term is exercised
        for v in p.values():
            v += 0.2 * rng.normal(v.size).reshape(v.shape)
    x = rng.uniform(4 * 64).reshape(4, 1, 8, 8)
    y = np.array([0, 1, 2, 1])
    worst, failed = 0.0, []
    for name, got, fd in gradient_check(net, params, x, y):
        worst = max(worst, float(np.max(np.abs(got - fd) / (1e-7 + np.abs(fd)), initial=0.0)))
        if not rel_ok(got, fd, 1e-4, 1e-7):
            failed.append(name)
    dt = time.perf_counter() - t0
    report(1, not failed and dt < 30, f"all parameter/activation gradients vs central differences "
                                      f"(worst scaled error {worst:.1e}, failed {failed}), {dt:.1f}s")


def test_criterion_2_unbiased_pruning():
    t0 = time.perf_counter()
    g = np.array([0.05, -0.3, 0.7, -1.2, 0.0])
    trials = 100_000
    # one seeded stream, drawn trial after trial
    out = stochastic_prune(np.tile(g, (trials, 1)), 1.0, Rng(SEED))
    mean = out.mean(axis=0)
    se = out.std(axis=0, ddof=1) / np.sqrt(trials)
    # components at or above tau (and zeros) never change: check those exactly
    fixed = np.all(out == out[0], axis=0)
    exact = bool(np.all(out[:, fixed] == g[fixed]))
    z = np.abs(mean - g)[~fixed] / se[~fixed]
    dt = time.perf_counter() - t0
    report(2, bool(np.all(z <= 4) and exact and dt < 5),
           f"mean {np.round(mean, 4).tolist()} vs g, max |z| = {z.max():.2f}, {dt:.2f}s")


def test_criterion_3_threshold_accuracy():
    g = Rng(SEED).normal(100_000)
    tau = determine_threshold(estimate_sigma(float(np.abs(g).sum()), g.size), 0.9)
    pred = ThresholdPredictor(4)
    data, prune_rng = Rng(SEED + 1), Rng(SEED + 2)
    for _ in range(20):
        predictor_step(pred, [data.normal(5000)], 0.9, prune_rng)
    err_d, err_p = abs(tau / TAU_0 - 1), abs(pred.predicted / TAU_0 - 1)
    report(3, err_d <= 0.02 and err_p <= 0.05,
           f"determined tau {tau:.4f} ({100 * err_d:.2f}% off), predicted {pred.predicted:.4f} "
           f"after 20 batches ({100 * err_p:.2f}% off)")


def last10_density(run, convs):
    d = [np.mean([h.densities[i] for i in convs]) for h in run.history[-10:]]
    return float(np.mean(d))


def test_criterion_4_sparsity_delivery():
    cfg, (base, pruned), _ = paired_runs()
    convs = cfg.network.conv_indices
    rb, rp = last10_density(base, convs), last10_density(pruned, convs)
    per_layer = {i: np.mean([h.densities[i] for h in base.history[-10:]]) /
                 np.mean([h.densities[i] for h in pruned.history[-10:]]) for i in convs}
    report(4, rb / rp >= 3.0, f"dO density {rb:.3f} -> {rp:.3f}, reduction {rb / rp:.2f}x "
                              f"(per layer {', '.join(f'L{i}: {v:.2f}x' for i, v in per_layer.items())})")


def test_criterion_5_accuracy_preservation():
    _, (base, pruned), dt = paired_runs()
    ab, ap = base.history[-1].accuracy, pruned.history[-1].accuracy
    delta = 100 * abs(ab - ap)
    report(5, delta <= 2.0 and dt < 300,
           f"baseline {100 * ab:.1f}% vs pruned {100 * ap:.1f}% (delta {delta:.1f} points), paired run {dt:.0f}s")


def test_criterion_6_dataflow_equivalence():
    worst, bad_mask, n = 0.0, 0, 0
    for cfg in LOWERING_MATRIX:
        for masked in (False, True):
            step = make_step(Rng(hash(cfg) & 0xFFFF), *cfg, masked=masked)
            _, outs = simulate([step], ArchConfig(n_groups=7), "sparse")
            out, d_in, dw, db = references(step)
            for got, want in ((outs.out[1], out), (outs.d_in[1], d_in), (outs.d_weight[1], dw),
                              (outs.d_bias[1], db)):
                scale = max(float(np.max(np.abs(want))), 1e-300)
                worst = max(worst, float(np.max(np.abs(got - want))) / scale)
            if masked:
                bad_mask += int(np.count_nonzero(outs.d_in[1][step.x == 0]))
            n += 1
    report(6, worst <= 1e-10 and bad_mask == 0,
           f"{n} lowered configurations, max relative error {worst:.1e}, "
           f"{bad_mask} nonzeros at masked-off positions")


def test_criterion_7_simulator_invariants():
    rng = Rng(SEED)
    arch = ArchConfig(n_groups=6)
    # zero-sparsity equivalence
    eq_bad = eq_n = 0
    for c, f, h, w, k, s, pad in LOWERING_MATRIX:
        if pad or k < s or (h - k) % s or (w - k) % s:
            continue
        st = make_step(rng, c, f, h, w, k, s, pad, density=1.0)
        st.x, st.d_out = np.abs(st.x) + 0.1, np.abs(st.d_out) + 0.1
        eq_bad += simulate([st], arch, "sparse")[0].cycles != simulate([st], arch, "dense")[0].cycles
        eq_n += 1
    # monotonicity under element-wise zeroing
    mono_bad = 0
    for _ in range(100):
        cfg = LOWERING_MATRIX[int(rng.uniform() * len(LOWERING_MATRIX))]
        st = make_step(rng, *cfg, density=0.3 + 0.7 * rng.uniform())
        before = simulate([st], arch, "sparse")[0].cycles
        thin = copy.deepcopy(st)
        for arr in (thin.x, thin.d_out):
            arr[rng.uniform(arr.size).reshape(arr.shape) < 0.25] = 0.0
        mono_bad += simulate([thin], arch, "sparse")[0].cycles > before
    # dense MAC conservation
    mac_bad = 0
    for c, f, h, w, k, s, pad in LOWERING_MATRIX:
        st = make_step(rng, c, f, h, w, k, s, pad)
        rep, _ = simulate([st], arch, "dense")
        fwd = next(r for r in rep.records if r.step == "forward")
        want = f * c * k * k * conv_output_size(h, k, s, pad) * conv_output_size(w, k, s, pad)
        mac_bad += fwd.tally.mac != want
    report(7, eq_bad == 0 and mono_bad == 0 and mac_bad == 0,
           f"zero-sparsity mismatches {eq_bad}/{eq_n}, monotonicity violations {mono_bad}/100, "
           f"MAC count mismatches {mac_bad}/{len(LOWERING_MATRIX)}")


def test_criterion_8_speedup_trend():
    # controlled regime: activation density 0.5, gradient density 0.3
    rng = Rng(SEED)
    steps = [make_step(rng, 1, 4, 8, 8, 3, 1, 1, density=1.0, masked=False, index=0),
             make_step(rng, 4, 8, 8, 8, 3, 1, 1, density=0.5, masked=True, index=4)]
    steps[0].x[rng.uniform(64).reshape(1, 8, 8) >= 0.5] = 0.0
    steps[0].needs_gta = False
    for st in steps:
        st.d_out[rng.uniform(st.d_out.size).reshape(st.d_out.shape) >= 0.3] = 0.0
    sparse, _ = simulate(steps, ArchConfig(), "sparse")
    dense, _ = simulate(steps, ArchConfig(), "dense")
    ctl_speed, ctl_energy = dense.cycles / sparse.cycles, dense.energy / sparse.energy
    dens = {i: sparse.densities[i] for i in (0, 4)}
    # the trained toy network with measured densities and live pruning
    res = ex.run_simulation(ex.load_config(None, {"seed": SEED}))
    rep = res.sparse[0].densities
    ok = ctl_speed > 1.5 and ctl_energy > 1.2 and res.speedup > 1.5 and res.energy_ratio > 1.2
    report(8, ok, f"controlled (I density {dens[0]['I']:.2f}/{dens[4]['I']:.2f}, dO density "
                  f"{dens[0]['dO']:.2f}/{dens[4]['dO']:.2f}): speedup {ctl_speed:.2f}x, energy {ctl_energy:.2f}x; "
                  f"trained toy net (I {rep[0]['I']:.2f}/{rep[4]['I']:.2f}, dO {rep[0]['dO']:.2f}/{rep[4]['dO']:.2f}): "
                  f"speedup {res.speedup:.2f}x, energy {res.energy_ratio:.2f}x")


def test_criterion_9_determinism():
    cfg, runs, _ = paired_runs()
    first = training_csv(cfg, runs)
    again_cfg = paired_config()
    second = training_csv(again_cfg, ex.run_training(again_cfg))
    sims = []
    for _ in range(2):
        res = ex.run_simulation(ex.load_config(None, {"seed": SEED}))
        sims.append("".join(r.to_csv() for r in res.sparse + res.dense))
    report(9, first == second and sims[0] == sims[1],
           f"training CSV {len(first)} bytes identical: {first == second}; "
           f"simulation CSV {len(sims[0])} bytes identical: {sims[0] == sims[1]}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
