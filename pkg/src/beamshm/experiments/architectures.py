"""Per-element CNNs and the stacked LSTM, described as layer configs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import layers as L
from ..nn.model import Sequential

ELEMENTS = ("E1", "E2", "E3", "E4")

# (filters, extent, pool extent or None) per convolution block
CNN_TABLE = {
    "E1": ((32, 3, 4), (32, 3, 2), (32, 3, 2), (8, 3, None)),
    "E2": ((64, 5, 4), (32, 3, 2), (32, 3, None)),
    "E3": ((64, 5, 4), (32, 3, 2), (16, 3, None)),
    "E4": ((16, 3, 2), (32, 3, 2)),
}

LSTM_UNITS = (32, 16, 4)
N_STEPS = 4


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str  # "cnn" | "lstm"
    element: str | None
    n_features: int
    input_shape: tuple  # per-sample shape after the reshape layer
    layers: tuple  # layer configs, reshape first

    def build(self, seed: int = 0) -> Sequential:
        rng = np.random.default_rng(seed)
        out = []
        for cfg in self.layers:
            cfg = dict(cfg)
            kind = cfg.pop("kind")
            cls = L.LAYER_KINDS[kind]
            if kind in ("conv2d", "dense", "lstm"):
                out.append(cls(**cfg, rng=rng))
            elif kind == "reshape":
                out.append(cls(cfg["shape"], cfg["n_features"]))
            else:
                out.append(cls(**cfg))
        return Sequential(out)

    def shape_trace(self) -> list[tuple]:
        """Per-sample shapes after every layer, starting at the flat input."""
        shapes = [(self.n_features,)]
        model = Sequential([L.layer_from_config(c) for c in self.layers])
        for i, layer in enumerate(model.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as exc:
                raise ConfigError(f"{self.kind} {self.element or ''} layer {i} "
                                  f"({layer.kind}) rejects input {shapes[-1]}: {exc}") from exc
        return shapes

    def spatial_trace(self) -> list[int]:
        """Grid height after the reshape and after each conv/pool layer."""
        trace = self.shape_trace()
        kinds = [c["kind"] for c in self.layers]
        return [s[0] for s, k in zip(trace[1:], kinds) if k in ("reshape", "conv2d", "maxpool2d")]


def build_cnn(element: str, grid=(200, 200), n_features: int | None = None) -> ArchitectureSpec:
    """Conv chain for one element, then global average pooling and Dense(1).

    The first convolution is same-padded, later ones are unpadded, every
    convolution has stride 1 and pooling is non-overlapping.
    """
    if element not in CNN_TABLE:
        raise ConfigError(f"element must be one of {ELEMENTS}, got {element!r}")
    h, w = (int(g) for g in grid)
    n_features = h * w if n_features is None else int(n_features)
    layers = [{"kind": "reshape", "shape": [h, w, 1], "n_features": n_features}]
    channels = 1
    for i, (filters, extent, pool) in enumerate(CNN_TABLE[element]):
        layers.append({"kind": "conv2d", "in_channels": channels, "filters": filters,
                       "extent": extent, "stride": 1,
                       "padding": (extent - 1) // 2 if i == 0 else 0})
        layers.append({"kind": "relu"})
        if pool is not None:
            layers.append({"kind": "maxpool2d", "extent": pool, "stride": pool})
        channels = filters
    layers.append({"kind": "global_average_pool"})
    layers.append({"kind": "dense", "n_in": channels, "n_out": 1})
    spec = ArchitectureSpec("cnn", element, n_features, (h, w, 1), tuple(layers))
    spec.shape_trace()
    return spec


def build_lstm(feature_length: int, units=LSTM_UNITS, n_outputs: int = 4) -> ArchitectureSpec:
    """One time step per response node; the final hidden state feeds a linear readout."""
    if feature_length % N_STEPS:
        raise ConfigError(f"feature length {feature_length} is not divisible by {N_STEPS}")
    step = feature_length // N_STEPS
    layers = [{"kind": "reshape", "shape": [N_STEPS, step], "n_features": feature_length}]
    d = step
    for j, k in enumerate(units):
        layers.append({"kind": "lstm", "input_dim": d, "units": k,
                       "return_sequences": j < len(units) - 1})
        d = k
    layers.append({"kind": "dense", "n_in": d, "n_out": n_outputs})
    return ArchitectureSpec("lstm", None, feature_length, (N_STEPS, step), tuple(layers))
