"""Fast built-in consistency checks behind ``rowflow selftest``.

Each check returns ``(passed, detail)``; none takes more than a second.
"""

from __future__ import annotations

import numpy as np

from .nn.network import conv
from .normal import norm_ppf
from .prune import determine_threshold, estimate_sigma, stochastic_prune
from .rng import Rng
from .sim import ArchConfig, LayerStep, simulate
from .tensor import conv2d_full_ref, conv2d_gtw_ref, conv2d_ref


def check_rng():
    got = Rng(1234567).next_u64(2).tolist()
    want = [6457827717110365317, 3203168211198807973]
    return got == want, f"splitmix64 first draws {got}"


def check_quantile():
    q = norm_ppf(0.95)
    return abs(q - 1.6448536269514722) < 1e-9, f"ppf(0.95)={q:.12f}"


def check_threshold():
    g = Rng(1).normal(100_000)
    tau = determine_threshold(estimate_sigma(float(np.abs(g).sum()), g.size), 0.9)
    return abs(tau / 1.6449 - 1) < 0.02, f"tau={tau:.4f}"


def check_unbiased():
    g = np.array([0.05, -0.3, 0.7, -1.2, 0.0])
    rng = Rng(2)
    trials = 20_000
    acc = np.zeros_like(g)
    sq = np.zeros_like(g)
    for _ in range(trials):
        out = stochastic_prune(g, 1.0, rng)
        acc += out
        sq += out * out
    mean = acc / trials
    se = np.sqrt(np.maximum(sq / trials - mean ** 2, 0) / trials)
    ok = bool(np.all(np.abs(mean - g) <= 4 * se + 1e-12))
    return ok, f"max |mean-g|={np.abs(mean - g).max():.4f}"


def _step(rng, pad):
    layer = conv(2, 3, 3, 1, pad)
    x = rng.normal(2 * 6 * 6).reshape(2, 6, 6)
    x[x < 0] = 0.0
    w = rng.normal(3 * 2 * 9).reshape(3, 2, 3, 3)
    b = rng.normal(3)
    ho = 6 + 2 * pad - 2
    d_out = rng.normal(3 * ho * ho).reshape(3, ho, ho)
    return LayerStep(1, layer, x, w, b, d_out, input_masked=True)


def check_dataflow():
    rng = Rng(3)
    worst = 0.0
    for pad in (0, 1):
        st = _step(rng, pad)
        _, outs = simulate([st], ArchConfig(n_groups=4), "sparse")
        lay = st.layer
        ref_o = conv2d_ref(st.x, st.weight, st.bias, lay.stride, lay.pad)
        ref_i = conv2d_full_ref(st.d_out, st.weight, st.x.shape, lay.stride, lay.pad) * (st.x != 0)
        ref_w, ref_b = conv2d_gtw_ref(st.d_out, st.x, lay.k, lay.stride, lay.pad)
        for got, want in ((outs.out[1], ref_o), (outs.d_in[1], ref_i),
                          (outs.d_weight[1], ref_w), (outs.d_bias[1], ref_b)):
            worst = max(worst, float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300)))
    return worst <= 1e-10, f"max relative error {worst:.2e}"


def check_zero_sparsity():
    rng = Rng(4)
    st = _step(rng, 0)
    st.x = np.abs(st.x) + 0.5
    st.input_masked = False
    sparse, _ = simulate([st], ArchConfig(n_groups=4), "sparse")
    dense, _ = simulate([st], ArchConfig(n_groups=4), "dense")
    return sparse.cycles == dense.cycles, f"sparse={sparse.cycles} dense={dense.cycles} cycles"


CHECKS = {
    "rng": check_rng,
    "quantile": check_quantile,
    "threshold": check_threshold,
    "unbiased-pruning": check_unbiased,
    "dataflow-equivalence": check_dataflow,
    "zero-sparsity": check_zero_sparsity,
}


def run_all():
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        yield name, bool(ok), detail
