"""Command-line entry point: ``rowflow train|simulate|dump-schedule|selftest``.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path


from . import experiment as ex
from .compiler import dump, lower_forward, lower_gta, lower_gtw
from .nn.data import FormatError
from .nn.network import CONV, init_params
from .nn.trainer import forward
from .rng import Rng, subseed
from .sim.engine import CSV_COLUMNS
from .tensor import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _timestamp() -> str:
    return time.strftime("%Y%m%dT%H%M%S", time.gmtime())


def _output_path(out: Path, command: str, suffix: str = "") -> Path:
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{command}_{_timestamp()}{suffix}"
    path = out / f"{stem}.csv"
    n = 1
    while path.exists():
        path = out / f"{stem}-{n}.csv"
        n += 1
    return path


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_manifest(cfg: ex.ExperimentConfig, command: str, extra: dict):
    lines = [f"command={command}", f"config_sha256={cfg.digest()}", f"seed={cfg.seed}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    (cfg.out / "manifest").write_text("\n".join(lines) + "\n")


def cmd_train(cfg: ex.ExperimentConfig) -> Path:
    x, y = ex.load_dataset(cfg)
    runs = ex.run_training(cfg, x, y)
    header, rows = ex.train_rows(cfg, runs)
    path = _output_path(cfg.out, "train")
    _write_csv(path, header, rows)
    extra = {f"{r.label}_init_sha256": r.init_digest for r in runs}
    extra["data_order_sha256"] = ex.data_order_digest(x.shape[0], cfg.epochs, cfg.seed)
    _write_manifest(cfg, "train", extra)
    for run in runs:
        last = run.history[-1] if run.history else None
        if last is not None:
            print(f"{run.label}: loss={last.loss:.4f} accuracy={last.accuracy:.4f}")
    print(f"wrote {path}")
    return path


def simulation_rows(result: ex.SimulationResult):
    """Per-layer rows summed over the simulated samples, then one total row per mode."""
    rows = []
    for reports in (result.sparse, result.dense):
        if not reports:
            continue
        agg: dict = {}
        for rep in reports:
            for r in rep.rows():
                key = (r["layer"], r["step"])
                acc = agg.setdefault(key, {**r, "energy_pj": 0.0, "cycles": 0, "mac_events": 0,
                                           "buffer_read_bytes": 0, "buffer_write_bytes": 0,
                                           "reg_accesses": 0})
                for col in ("cycles", "mac_events", "buffer_read_bytes", "buffer_write_bytes", "reg_accesses"):
                    acc[col] += r[col]
                acc["energy_pj"] += float(r["energy_pj"])
        for r in agg.values():
            rows.append([r[c] if c != "energy_pj" else f"{r[c]:.3f}" for c in CSV_COLUMNS])
    return rows


def summary_row(result: ex.SimulationResult):
    sc = sum(r.cycles for r in result.sparse)
    dc = sum(r.cycles for r in result.dense)
    se = sum(r.energy for r in result.sparse)
    de = sum(r.energy for r in result.dense)
    speed = f"{result.speedup:.2f}" if result.speedup is not None else ""
    ratio = f"{result.energy_ratio:.2f}" if result.energy_ratio is not None else ""
    return ["samples", "sparse_cycles", "dense_cycles", "speedup", "sparse_energy_pj",
            "dense_energy_pj", "energy_ratio"], [result.samples, sc, dc, speed, f"{se:.3f}", f"{de:.3f}", ratio]


def cmd_simulate(cfg: ex.ExperimentConfig, mode: str = "both") -> Path:
    modes = ("sparse", "dense") if mode == "both" else (mode,)
    result = ex.run_simulation(cfg, modes)
    path = _output_path(cfg.out, "simulate")
    _write_csv(path, CSV_COLUMNS, simulation_rows(result))
    header, row = summary_row(result)
    _write_csv(path.with_name(path.stem + "_summary.csv"), header, [row])
    _write_manifest(cfg, "simulate", {"mode": mode})
    line = f"samples={result.samples}"
    if result.speedup is not None:
        line += f" speedup={result.speedup:.2f} energy_ratio={result.energy_ratio:.2f}"
    print(line)
    print(f"wrote {path}")
    return path


def dump_schedule(cfg: ex.ExperimentConfig, layer: int, phase: str = "all") -> str:
    net = cfg.network
    if not 0 <= layer < len(net.layers) or net.layers[layer].kind != CONV:
        raise UsageError(f"layer {layer} is not a CONV layer (CONV layers: {net.conv_indices})")
    spec = net.layers[layer]
    in_shape = net.shapes[layer]
    instrs = []
    if phase in ("forward", "all"):
        instrs += lower_forward(spec, layer, in_shape)
    if phase in ("gta", "all"):
        mask = None
        if net.input_masked(layer):
            x, _ = ex.load_dataset(cfg)
            params = init_params(net, Rng(subseed(cfg.seed, "init")))
            _, ctx = forward(net, params, x[:1])
            mask = ctx.inputs[layer][0] != 0
        instrs += lower_gta(spec, layer, in_shape, mask, mask_required=net.input_masked(layer))
    if phase in ("gtw", "all"):
        instrs += lower_gtw(spec, layer, in_shape)
    return dump(instrs)


def selftest() -> bool:
    from . import selfcheck
    ok = True
    for name, passed, detail in selfcheck.run_all():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return ok


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--prune-p", type=float, dest="p", help="target sparsity p")
    common.add_argument("--fifo-depth", type=int, dest="fifo_depth")
    common.add_argument("--epochs", type=int)
    common.add_argument("--no-prune", action="store_true", help="train without pruning")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rowflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train baseline and/or pruned networks")
    sim = sub.add_parser("simulate", parents=[common], help="simulate training steps")
    sim.add_argument("--mode", choices=("sparse", "dense", "both"), default="both")
    dmp = sub.add_parser("dump-schedule", parents=[common], help="print a layer's instruction stream")
    dmp.add_argument("--layer", type=int, required=True)
    dmp.add_argument("--phase", choices=("forward", "gta", "gtw", "all"), default="all")
    sub.add_parser("selftest", help="run built-in consistency checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return EXIT_OK if selftest() else EXIT_RUNTIME
        overrides = {"seed": args.seed, "epochs": args.epochs, "p": args.p, "fifo_depth": args.fifo_depth}
        if args.out is not None:
            overrides["out"] = str(args.out.resolve())
        cfg = ex.load_config(args.config, overrides)
        if args.no_prune:
            cfg = ex.with_overrides(cfg, prune=None)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.mode)
        elif args.command == "dump-schedule":
            sys.stdout.write(dump_schedule(cfg, args.layer, args.phase))
        return EXIT_OK
    except (ConfigurationError, FormatError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced verbatim with the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
