"""Layer stacks and their on-disk checkpoint format."""

from __future__ import annotations

import numpy as np

from ..checkpoint import read_checkpoint, write_checkpoint
from ..errors import ArtifactIOError
from .layers import Conv2D, Layer, layer_from_config

MODEL_FORMAT = "beamshm-sequential"


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad, need_input_grad: bool = True):
        """Backpropagate ``grad``; returns the input gradient, or None when it
        is not requested (the first parametrised layer then skips its own)."""
        first = next((i for i, layer in enumerate(self.layers) if layer.params), 0)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if not need_input_grad and i == first:
                if isinstance(layer, Conv2D):
                    layer.backward(grad, need_input_grad=False)
                else:
                    layer.backward(grad)
                return None
            grad = layer.backward(grad)
        return grad

    def named_params(self) -> dict:
        """Flat, ordered view onto every parameter array (no copies)."""
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers)
                for name, arr in layer.params.items()}

    def named_grads(self) -> dict:
        return {f"{i}.{name}": layer.grads[name] for i, layer in enumerate(self.layers)
                for name in layer.params}

    def n_params(self) -> int:
        return sum(a.size for a in self.named_params().values())

    def shape_trace(self, input_shape) -> list[tuple]:
        """Per-sample shapes after each layer, starting with the input."""
        shapes = [tuple(input_shape)]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        return shapes

    def config(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    @classmethod
    def from_config(cls, cfg: list[dict]) -> "Sequential":
        return cls([layer_from_config(c) for c in cfg])


def save_model(path, model: Sequential, extra: dict | None = None,
               extra_arrays: dict | None = None) -> None:
    header = {"format": MODEL_FORMAT, "layers": model.config(), "extra": extra or {}}
    arrays = dict(model.named_params())
    for key, arr in (extra_arrays or {}).items():
        arrays[f"extra.{key}"] = arr
    write_checkpoint(path, header, arrays)


def load_model(path) -> tuple[Sequential, dict, dict]:
    """Returns (model, extra header dict, extra arrays)."""
    header, arrays = read_checkpoint(path)
    if header.get("format") != MODEL_FORMAT:
        raise ArtifactIOError(f"{path}: not a layer-stack checkpoint")
    model = Sequential.from_config(header["layers"])
    params = model.named_params()
    for key, arr in params.items():
        if key not in arrays or arrays[key].shape != arr.shape:
            raise ArtifactIOError(f"{path}: parameter {key} missing or misshapen")
        arr[...] = arrays[key]
    extras = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return model, header["extra"], extras


def clone(model: Sequential) -> Sequential:
    copy = Sequential.from_config(model.config())
    for key, arr in copy.named_params().items():
        arr[...] = model.named_params()[key]
    return copy


def set_params(model: Sequential, values: dict) -> None:
    for key, arr in model.named_params().items():
        arr[...] = values[key]


def snapshot(model: Sequential) -> dict:
    return {k: np.array(v) for k, v in model.named_params().items()}
