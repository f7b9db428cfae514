"""Network topology: layer specs, shape inference and parameter init."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import Rng
from ..tensor import ConfigurationError, conv_output_size

CONV, RELU, MAXPOOL, BATCHNORM, FLATTEN, FC = "conv", "relu", "maxpool", "batchnorm", "flatten", "fc"
KINDS = (CONV, RELU, MAXPOOL, BATCHNORM, FLATTEN, FC)

# pruning structures of a CONV layer
CONV_RELU = "conv-relu"
CONV_BN_RELU = "conv-bn-relu"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    k: int = 0
    stride: int = 1
    pad: int = 0
    window: int = 0
    in_features: int = 0
    out_features: int = 0
    channels: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        keep = {
            CONV: ("in_channels", "out_channels", "k", "stride", "pad"),
            MAXPOOL: ("window", "stride"),
            BATCHNORM: ("channels",),
            FC: ("in_features", "out_features"),
        }.get(self.kind, ())
        return {"kind": self.kind, **{name: getattr(self, name) for name in keep}}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("kind")
        if kind == MAXPOOL and "stride" not in d:
            d["stride"] = d.get("window", 0)
        try:
            return cls(kind=kind, **d)
        except TypeError as exc:
            raise ConfigurationError(f"bad fields for {kind} layer: {exc}") from None


def conv(c: int, f: int, k: int, stride: int = 1, pad: int = 0) -> LayerSpec:
    return LayerSpec(CONV, in_channels=c, out_channels=f, k=k, stride=stride, pad=pad)


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def maxpool(window: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec(MAXPOOL, window=window, stride=stride or window)


def batchnorm(channels: int) -> LayerSpec:
    return LayerSpec(BATCHNORM, channels=channels)


def flatten() -> LayerSpec:
    return LayerSpec(FLATTEN)


def fc(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec(FC, in_features=n_in, out_features=n_out)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    n_classes: int
    lr: float = 0.05
    batch_size: int = 10
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if not self.layers or self.layers[-1].kind != FC:
            raise ConfigurationError("network must end in an FC layer")
        if self.layers[-1].out_features != self.n_classes:
            raise ConfigurationError("final FC width must equal the class count")
        object.__setattr__(self, "shapes", self._infer_shapes())

    def _infer_shapes(self) -> tuple:
        shapes = [self.input_shape]
        shape = self.input_shape
        for idx, layer in enumerate(self.layers):
            where = f"layer {idx} ({layer.kind})"
            if layer.kind == CONV:
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise ConfigurationError(f"{where}: expects {layer.in_channels} channels, got shape {shape}")
                if layer.stride < 1 or layer.pad < 0 or layer.k < 1 or layer.out_channels < 1:
                    raise ConfigurationError(f"{where}: bad conv parameters")
                shape = (layer.out_channels,
                         conv_output_size(shape[1], layer.k, layer.stride, layer.pad),
                         conv_output_size(shape[2], layer.k, layer.stride, layer.pad))
            elif layer.kind == MAXPOOL:
                if len(shape) != 3 or layer.window < 1 or layer.stride < 1:
                    raise ConfigurationError(f"{where}: bad pooling on shape {shape}")
                shape = (shape[0],
                         conv_output_size(shape[1], layer.window, layer.stride, 0),
                         conv_output_size(shape[2], layer.window, layer.stride, 0))
            elif layer.kind == BATCHNORM:
                if len(shape) != 3 or shape[0] != layer.channels:
                    raise ConfigurationError(f"{where}: channel count mismatch with {shape}")
            elif layer.kind == FLATTEN:
                shape = (int(np.prod(shape)),)
            elif layer.kind == FC:
                if shape != (layer.in_features,):
                    raise ConfigurationError(f"{where}: expects ({layer.in_features},), got {shape}")
                shape = (layer.out_features,)
            shapes.append(shape)
        return tuple(shapes)

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == CONV]

    def structure(self, idx: int) -> str | None:
        """Pruning structure of CONV layer ``idx``: conv-relu, conv-bn-relu or None."""
        kinds = [layer.kind for layer in self.layers[idx + 1: idx + 3]]
        if kinds[:1] == [RELU]:
            return CONV_RELU
        if kinds == [BATCHNORM, RELU]:
            return CONV_BN_RELU
        return None

    def input_masked(self, idx: int) -> bool:
        """True when the layer's input comes out of ReLU (optionally followed by
        max pooling), so its zero pattern is exactly the backward ReLU mask."""
        j = idx - 1
        while j >= 0 and self.layers[j].kind == MAXPOOL:
            j -= 1
        return j >= 0 and self.layers[j].kind == RELU

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            return cls(
                layers=[LayerSpec.from_dict(x) for x in d["layers"]],
                input_shape=tuple(d["input_shape"]),
                n_classes=int(d["n_classes"]),
                lr=float(d.get("lr", 0.05)),
                batch_size=int(d.get("batch_size", 10)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"network config missing field {exc}") from None


def init_params(net: NetworkSpec, rng: Rng) -> dict:
    """He-normal conv/FC weights, zero biases, unit BN scale."""
    params = {}
    for idx, layer in enumerate(net.layers):
        if layer.kind == CONV:
            fan_in = layer.in_channels * layer.k * layer.k
            n = layer.out_channels * fan_in
            w = rng.normal(n).reshape(layer.out_channels, layer.in_channels, layer.k, layer.k)
            params[idx] = {"W": w * np.sqrt(2.0 / fan_in), "b": np.zeros(layer.out_channels)}
        elif layer.kind == FC:
            n = layer.out_features * layer.in_features
            w = rng.normal(n).reshape(layer.out_features, layer.in_features)
            params[idx] = {"W": w * np.sqrt(2.0 / layer.in_features), "b": np.zeros(layer.out_features)}
        elif layer.kind == BATCHNORM:
            params[idx] = {"gamma": np.ones(layer.channels), "beta": np.zeros(layer.channels)}
    return params


def toy_network(lr: float = 0.05, batch_size: int = 10, channels=(4, 8)) -> NetworkSpec:
    """2-CONV toy classifier for 1x8x8 inputs with both pruning structures."""
    c1, c2 = channels
    return NetworkSpec(
        layers=[
            conv(1, c1, 3, pad=1), batchnorm(c1), relu(), maxpool(2),
            conv(c1, c2, 3, pad=1), batchnorm(c2), relu(), maxpool(2),
            flatten(), fc(c2 * 4, 3),
        ],
        input_shape=(1, 8, 8), n_classes=3, lr=lr, batch_size=batch_size,
    )
