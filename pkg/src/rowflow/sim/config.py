"""Architecture parameters and the JSON config schema.

Example file (every key optional)::

    {
      "n_groups": 56,
      "pes_per_group": 3,
      "k_max": 11,
      "buffer_bytes": 395264,
      "bytes_per_value": 2,
      "bandwidth": 16,
      "costs_pj": {"buffer_read": 6.0, "buffer_write": 6.0,
                   "reg_access": 0.5, "mac": 1.0, "ppu_op": 0.3}
    }

Costs are per event; buffer events are per value moved.  The default costs
are uncalibrated placeholders: only ratios between runs are meaningful.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..tensor import ConfigurationError

EVENTS = ("buffer_read", "buffer_write", "reg_access", "mac", "ppu_op")

DEFAULT_COSTS = {
    "buffer_read": 6.0,
    "buffer_write": 6.0,
    "reg_access": 0.5,
    "mac": 1.0,
    "ppu_op": 0.3,
}


@dataclass(frozen=True)
class ArchConfig:
    n_groups: int = 56
    pes_per_group: int = 3
    k_max: int = 11
    buffer_bytes: int = 386 * 1024
    bytes_per_value: int = 2
    bandwidth: int = 16          # bytes per cycle between buffer and PE groups
    costs_pj: dict = field(default_factory=lambda: dict(DEFAULT_COSTS))

    def __post_init__(self):
        for name in ("n_groups", "pes_per_group", "k_max", "buffer_bytes", "bytes_per_value", "bandwidth"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"arch config: {name} must be >= 1")
        costs = {**DEFAULT_COSTS, **self.costs_pj}
        unknown = set(costs) - set(EVENTS)
        if unknown:
            raise ConfigurationError(f"arch config: unknown cost events {sorted(unknown)}")
        if any(v < 0 for v in costs.values()):
            raise ConfigurationError("arch config: event costs must be >= 0")
        object.__setattr__(self, "costs_pj", costs)

    @property
    def n_pes(self) -> int:
        return self.n_groups * self.pes_per_group

    def scaled_costs(self, factor: float) -> "ArchConfig":
        return ArchConfig(**{**asdict(self), "costs_pj": {k: v * factor for k, v in self.costs_pj.items()}})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"arch config: unknown keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ArchConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot load arch config {path}: {exc}") from None
