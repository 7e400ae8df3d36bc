"""A small stack of dense layers used as a stand-in base model."""
from __future__ import annotations

from dataclasses import dataclass, field
from fnmatch import fnmatchcase

import numpy as np

from para.adapter import ConvShape
from para.errors import NonConforming
from para.linalg import as_matrix

ACTIVATIONS = ("linear", "tanh")


@dataclass(frozen=True)
class Layer:
    name: str
    w0: np.ndarray
    conv_shape: ConvShape | None = None

    def __post_init__(self):
        w0 = as_matrix(self.w0, f"{self.name}.w0")
        object.__setattr__(self, "w0", w0)
        if self.conv_shape is not None and w0.shape != (
            self.conv_shape.c_out,
            self.conv_shape.in_features,
        ):
            raise NonConforming(f"{self.name}: w0 {w0.shape} does not match {self.conv_shape}")

    @property
    def shape(self):
        return self.w0.shape


@dataclass(frozen=True)
class ToyModel:
    """Layers applied in order; ``activation`` sits between layers, not after the last."""

    layers: tuple[Layer, ...]
    activation: str = "linear"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise NonConforming("model needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise NonConforming("layer names must be unique")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.shape[0] != nxt.shape[1]:
                raise NonConforming(
                    f"{prev.name} outputs {prev.shape[0]} but {nxt.name} expects {nxt.shape[1]}"
                )
        object.__setattr__(self, "_index", {layer.name: i for i, layer in enumerate(layers)})

    @property
    def in_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].shape[0]

    def layer(self, name: str) -> Layer:
        return self.layers[self._index[name]]

    def select(self, pattern: str = "*") -> list[str]:
        """Layer names matching a glob pattern (``*`` and ``?``), in model order."""
        return [layer.name for layer in self.layers if fnmatchcase(layer.name, pattern)]

    def weights(self, overrides: dict | None = None) -> list[np.ndarray]:
        overrides = overrides or {}
        return [overrides.get(layer.name, layer.w0) for layer in self.layers]

    def forward(self, x, weights: list[np.ndarray] | None = None) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[0] != self.in_dim:
            raise NonConforming(f"input has {x.shape[0]} rows, model expects {self.in_dim}")
        ws = self.weights() if weights is None else weights
        h = x
        for i, w in enumerate(ws):
            h = w @ h
            if i < len(ws) - 1 and self.activation == "tanh":
                h = np.tanh(h)
        return h

    def with_weights(self, new: dict) -> "ToyModel":
        layers = [
            Layer(layer.name, new.get(layer.name, layer.w0), layer.conv_shape)
            for layer in self.layers
        ]
        return ToyModel(tuple(layers), self.activation)


def random_model(dims, seed=0, activation="linear", prefix="layer") -> ToyModel:
    """Gaussian layers scaled by ``1/sqrt(fan_in)``; ``dims`` lists widths input-first."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (k, d) in enumerate(zip(dims, dims[1:])):
        layers.append(Layer(f"{prefix}{i}", rng.standard_normal((d, k)) / np.sqrt(k)))
    return ToyModel(tuple(layers), activation)
