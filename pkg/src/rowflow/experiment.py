"""Experiment configuration (JSON) and the runs behind the CLI commands.

Schema, all keys optional except where noted::

    {
      "name": "toy",
      "network": "toy" | {"input_shape": [1, 8, 8], "n_classes": 3,
                          "lr": 0.05, "batch_size": 10, "layers": [...]},
      "dataset": {"kind": "synthetic", "n": 200, "jitter": 1.2, "noise": 0.25}
               | {"kind": "uniform", "n": 50, "n_classes": 3}
               | {"kind": "idx", "images": "imgs.idx", "labels": "labels.idx"},
      "prune": {"p": 0.9, "fifo_depth": 4} | null,
      "paired": true,
      "epochs": 50,
      "seed": 0,
      "arch": "arch.json" | {...ArchConfig fields...} | null,
      "simulate": {"samples": 4, "warmup_epochs": 3},
      "out": "runs/toy"
    }

Layers are objects such as ``{"kind": "conv", "in_channels": 1,
"out_channels": 4, "k": 3, "stride": 1, "pad": 1}``, ``{"kind": "relu"}``,
``{"kind": "maxpool", "window": 2}``, ``{"kind": "batchnorm", "channels": 4}``,
``{"kind": "flatten"}`` and ``{"kind": "fc", "in_features": 32,
"out_features": 3}``.  Relative paths resolve against the config file.

All randomness derives from ``seed`` through named sub-seeds (``data``,
``init``, ``shuffle``, ``prune``, ``sim``), so one stream can change
without disturbing the others.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .nn import data as datasets
from .nn.network import NetworkSpec, init_params, toy_network
from .nn.trainer import EpochMetrics, Pruner, backward, loss_and_grad, train
from .prune import PruneConfig
from .rng import Rng, subseed
from .sim import ArchConfig, simulate
from .sim.bridge import layer_steps
from .tensor import ConfigurationError

DEFAULTS = {
    "name": "run",
    "network": "toy",
    "dataset": {"kind": "synthetic", "n": 200},
    "prune": {"p": 0.9, "fifo_depth": 4},
    "paired": True,
    "epochs": 50,
    "seed": 0,
    "arch": None,
    "simulate": {"samples": 4, "warmup_epochs": 3},
    "out": "runs",
}


@dataclass
class ExperimentConfig:
    network: NetworkSpec
    dataset: dict
    prune: PruneConfig | None
    arch: ArchConfig
    epochs: int
    seed: int
    out: Path
    paired: bool = True
    name: str = "run"
    simulate: dict = field(default_factory=lambda: dict(DEFAULTS["simulate"]))
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: Path = Path(".")

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    raw = copy.deepcopy(DEFAULTS)
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"config {path}: unknown keys {sorted(unknown)}")
        raw.update(user)
        base = path.parent
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("p", "fifo_depth"):
            prune = dict(raw.get("prune") or {"p": 0.9, "fifo_depth": 4})
            prune[key] = value
            raw["prune"] = prune
        else:
            raw[key] = value
    return from_dict(raw, base)


def from_dict(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    net = raw["network"]
    if net == "toy":
        network = toy_network()
    elif isinstance(net, dict):
        network = NetworkSpec.from_dict(net)
    else:
        raise ConfigurationError(f"network must be 'toy' or an object, got {net!r}")
    prune = PruneConfig(**raw["prune"]) if raw.get("prune") else None
    arch_raw = raw.get("arch")
    if arch_raw is None:
        arch = ArchConfig()
    elif isinstance(arch_raw, str):
        arch = ArchConfig.load(_resolve(base_dir, arch_raw))
    else:
        arch = ArchConfig.from_dict(arch_raw)
    sim = {**DEFAULTS["simulate"], **(raw.get("simulate") or {})}
    try:
        epochs, seed = int(raw["epochs"]), int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigurationError("epochs and seed must be integers") from None
    if epochs < 0:
        raise ConfigurationError("epochs must be >= 0")
    return ExperimentConfig(
        network=network, dataset=dict(raw["dataset"]), prune=prune, arch=arch, epochs=epochs,
        seed=seed, out=_resolve(base_dir, str(raw["out"])), paired=bool(raw.get("paired", True)),
        name=str(raw.get("name", "run")), simulate=sim, raw=raw, base_dir=base_dir)


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_dataset(cfg: ExperimentConfig):
    spec = dict(cfg.dataset)
    kind = spec.pop("kind", "synthetic")
    rng = Rng(subseed(cfg.seed, "data"))
    shape = cfg.network.input_shape
    if kind == "synthetic":
        n = int(spec.pop("n", 200))
        if shape[0] != 1 or shape[1] != shape[2]:
            raise ConfigurationError(f"synthetic blobs are 1xSxS images, network expects {shape}")
        x, y = datasets.synthetic_blobs(n, rng, size=shape[1], n_classes=cfg.network.n_classes, **spec)
    elif kind == "uniform":
        n = int(spec.get("n", 50))
        size = n * int(np.prod(shape))
        x = (0.05 + 0.95 * rng.uniform(size)).reshape((n, *shape))
        y = rng.integers(cfg.network.n_classes, n)
    elif kind == "idx":
        try:
            x, y = datasets.load_idx(_resolve(cfg.base_dir, spec["images"]),
                                     _resolve(cfg.base_dir, spec["labels"]))
        except KeyError as exc:
            raise ConfigurationError(f"idx dataset needs {exc}") from None
        except OSError as exc:
            raise ConfigurationError(f"cannot read dataset: {exc}") from None
        if x.shape[1:] != shape:
            raise ConfigurationError(f"dataset images {x.shape[1:]} do not match network input {shape}")
    else:
        raise ConfigurationError(f"unknown dataset kind {kind!r}")
    if y.max(initial=0) >= cfg.network.n_classes:
        raise ConfigurationError("dataset labels exceed the network's class count")
    return x, y


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for idx in sorted(params):
        for name in sorted(params[idx]):
            h.update(f"{idx}/{name}".encode())
            h.update(np.ascontiguousarray(params[idx][name]).tobytes())
    return h.hexdigest()


def data_order_digest(n: int, epochs: int, seed: int) -> str:
    rng = Rng(subseed(seed, "shuffle"))
    h = hashlib.sha256()
    for _ in range(epochs):
        h.update(rng.permutation(n).tobytes())
    return h.hexdigest()


@dataclass
class TrainRun:
    label: str
    history: list
    params: dict
    init_digest: str


def run_training(cfg: ExperimentConfig, x=None, y=None) -> list[TrainRun]:
    """Pruned run (when configured) plus, in paired mode, an unpruned baseline
    from the same initial weights and data order."""
    if x is None:
        x, y = load_dataset(cfg)
    plans = []
    if cfg.prune is None or cfg.paired:
        plans.append(("baseline", None))
    if cfg.prune is not None:
        plans.append(("pruned", cfg.prune))
    runs = []
    for label, prune in plans:
        params = init_params(cfg.network, Rng(subseed(cfg.seed, "init")))
        digest = params_digest(params)
        final, history = train(cfg.network, params, x, y, cfg.epochs, cfg.seed, prune)
        runs.append(TrainRun(label, history, final, digest))
    return runs


def train_rows(cfg: ExperimentConfig, runs: list[TrainRun]) -> tuple[list[str], list[list]]:
    convs = cfg.network.conv_indices
    header = ["epoch"]
    for run in runs:
        header += [f"{run.label}_loss", f"{run.label}_accuracy"]
        header += [f"{run.label}_rho_nnz_L{i}" for i in convs]
        header += [f"{run.label}_tau_L{i}" for i in convs]
    rows = []
    for e in range(cfg.epochs):
        row = [e + 1]
        for run in runs:
            m: EpochMetrics = run.history[e]
            row += [f"{m.loss:.10g}", f"{m.accuracy:.6f}"]
            row += [f"{m.densities[i]:.6f}" for i in convs]
            row += ["" if m.taus[i] is None else f"{m.taus[i]:.10g}" for i in convs]
        rows.append(row)
    return header, rows


@dataclass
class SimulationResult:
    sparse: list          # SimReport per sample
    dense: list
    samples: int

    def _total(self, reports, attr):
        return sum(getattr(r, attr) for r in reports)

    @property
    def speedup(self) -> float | None:
        if not self.sparse or not self.dense:
            return None
        return self._total(self.dense, "cycles") / self._total(self.sparse, "cycles")

    @property
    def energy_ratio(self) -> float | None:
        if not self.sparse or not self.dense:
            return None
        return self._total(self.dense, "energy") / self._total(self.sparse, "energy")


def run_simulation(cfg: ExperimentConfig, modes=("sparse", "dense"), x=None, y=None) -> SimulationResult:
    """Warm the network (and the threshold FIFOs) up by training, then lower
    and simulate one training step for each of the first ``samples`` batch
    elements of a fresh batch."""
    if x is None:
        x, y = load_dataset(cfg)
    net = cfg.network
    warm = int(cfg.simulate.get("warmup_epochs", 3))
    samples = int(cfg.simulate.get("samples", 4))
    if samples < 1:
        raise ConfigurationError("simulate.samples must be >= 1")
    params = init_params(net, Rng(subseed(cfg.seed, "init")))
    pruner = Pruner(net, cfg.prune, subseed(cfg.seed, "prune")) if cfg.prune is not None else None
    if warm:
        params, _ = train(net, params, x, y, warm, cfg.seed, pruner=pruner)
    n = min(samples, x.shape[0])
    batch_sel = Rng(subseed(cfg.seed, "sim")).permutation(x.shape[0])[:max(n, min(net.batch_size, x.shape[0]))]
    _, dlogits, _, ctx = loss_and_grad(net, params, x[batch_sel], y[batch_sel])
    grads = backward(net, params, ctx, dlogits)
    result = SimulationResult([], [], n)
    for s in range(n):
        taus, rngs = {}, {}
        if pruner is not None:
            for idx, pred in pruner.predictors.items():
                taus[idx] = pred.predicted
                rngs[idx] = Rng(subseed(cfg.seed, f"sim/prune/layer{idx}/sample{s}"))
        if "sparse" in modes:
            steps = layer_steps(net, params, ctx, grads, s, taus, rngs)
            result.sparse.append(simulate(steps, cfg.arch, "sparse")[0])
        if "dense" in modes:
            steps = layer_steps(net, params, ctx, grads, s)
            result.dense.append(simulate(steps, cfg.arch, "dense")[0])
    return result


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
