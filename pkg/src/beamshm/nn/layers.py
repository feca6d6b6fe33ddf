"""Stateful layers: forward caches what backward needs; gradients land in ``grads``."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from . import ops


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, input_shape):
        """Shape of one sample's output, without the batch axis."""
        return input_shape

    def config(self) -> dict:
        return {"kind": self.kind}

    def __call__(self, x):
        return self.forward(x)


def _fan_uniform(rng, shape, fan_in, fan_out=None, gain=2.0):
    # He-style when fan_out is None, Glorot-style otherwise
    denom = fan_in if fan_out is None else (fan_in + fan_out) / 2.0
    limit = math.sqrt(3.0 * gain / denom) if fan_out is None else math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, filters, extent, stride=1, padding=0, rng=None):
        super().__init__()
        if filters < 1 or extent < 1 or stride < 1:
            raise ShapeError("conv needs filters, extent, stride >= 1")
        if padding == "same":
            padding = ops.same_padding(extent)
        if padding < 0:
            raise ShapeError("padding must be >= 0")
        self.in_channels, self.filters, self.extent = in_channels, filters, extent
        self.stride, self.padding = stride, int(padding)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = extent * extent * in_channels
        self.params["w"] = _fan_uniform(rng, (extent, extent, in_channels, filters), fan_in)
        self.params["b"] = np.zeros(filters)

    def forward(self, x):
        self._x = x
        self._cols = ops.im2col(x, self.extent, self.stride, self.padding)
        return ops.conv2d_forward(x, self.params["w"], self.params["b"], self.stride,
                                  self.padding, cols=self._cols)

    def backward(self, grad, need_input_grad=True):
        dx, dw, db = ops.conv2d_backward(grad, self._x, self.params["w"], self.stride,
                                         self.padding, need_input_grad, cols=self._cols)
        self.grads["w"], self.grads["b"] = dw, db
        return dx

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        return (ops.conv_output_size(h, self.extent, self.stride, 2 * self.padding, "H"),
                ops.conv_output_size(w, self.extent, self.stride, 2 * self.padding, "W"),
                self.filters)

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters,
                "extent": self.extent, "stride": self.stride, "padding": self.padding}


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, extent, stride=None):
        super().__init__()
        self.extent = extent
        self.stride = extent if stride is None else stride

    def forward(self, x):
        self._shape = x.shape
        out, self._arg = ops.maxpool2d_forward(x, self.extent, self.stride)
        return out

    def backward(self, grad):
        return ops.maxpool2d_backward(grad, self._arg, self._shape, self.extent, self.stride)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (ops.conv_output_size(h, self.extent, self.stride, 0, "H"),
                ops.conv_output_size(w, self.extent, self.stride, 0, "W"), c)

    def config(self):
        return {"kind": self.kind, "extent": self.extent, "stride": self.stride}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._x = x
        return ops.relu_forward(x)

    def backward(self, grad):
        return ops.relu_backward(grad, self._x)


class GlobalAveragePool(Layer):
    kind = "global_average_pool"

    def forward(self, x):
        self._shape = x.shape
        return ops.global_average_pool_forward(x)

    def backward(self, grad):
        return ops.global_average_pool_backward(grad, self._shape)

    def output_shape(self, input_shape):
        return (input_shape[-1],)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = _fan_uniform(rng, (n_in, n_out), n_in, n_out)
        self.params["b"] = np.zeros(n_out)

    def forward(self, x):
        self._x = x
        return ops.dense_forward(x, self.params["w"], self.params["b"])

    def backward(self, grad):
        dx, self.grads["w"], self.grads["b"] = ops.dense_backward(grad, self._x, self.params["w"])
        return dx

    def output_shape(self, input_shape):
        if input_shape[-1] != self.n_in:
            raise ShapeError(f"dense expects {self.n_in} inputs, got {input_shape[-1]}")
        return (*input_shape[:-1], self.n_out)

    def config(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


class Reshape(Layer):
    """Maps flat feature vectors onto a grid, zero-filling any tail."""

    kind = "reshape"

    def __init__(self, shape, n_features=None):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)
        size = int(np.prod(self.shape))
        self.n_features = size if n_features is None else int(n_features)
        if self.n_features > size:
            raise ShapeError(f"{self.n_features} features do not fit in {self.shape}")

    def forward(self, x):
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {x.shape[1]}")
        size = int(np.prod(self.shape))
        if size != self.n_features:
            x = np.concatenate([x, np.zeros((x.shape[0], size - self.n_features))], axis=1)
        return x.reshape((x.shape[0], *self.shape))

    def backward(self, grad):
        return grad.reshape(grad.shape[0], -1)[:, :self.n_features]

    def output_shape(self, input_shape):
        return self.shape

    def config(self):
        return {"kind": self.kind, "shape": list(self.shape), "n_features": self.n_features}


GATES = ("i", "f", "o", "a")  # input, forget, output gates; candidate activation


class LSTM(Layer):
    """Single LSTM layer over (N, T, d) sequences, h0 = c0 = 0.

    W is (d, 4k), U is (k, 4k), b is (4k,), column blocks in ``GATES`` order.
    The candidate block uses tanh, the three gates the logistic sigmoid.
    """

    kind = "lstm"

    def __init__(self, input_dim, units, return_sequences=True, rng=None):
        super().__init__()
        self.input_dim, self.units, self.return_sequences = input_dim, units, return_sequences
        rng = rng if rng is not None else np.random.default_rng(0)
        k = units
        self.params["W"] = _fan_uniform(rng, (input_dim, 4 * k), input_dim, 4 * k)
        q, r = np.linalg.qr(rng.standard_normal((4 * k, k)))
        self.params["U"] = np.ascontiguousarray((q * np.sign(np.diag(r))).T)
        b = np.zeros(4 * k)
        b[k:2 * k] = 1.0  # forget-gate bias
        self.params["b"] = b

    def forward(self, x):
        n, t_steps, d = x.shape
        if d != self.input_dim:
            raise ShapeError(f"LSTM expects input dim {self.input_dim}, got {d}")
        k = self.units
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        h = np.zeros((n, k))
        c = np.zeros((n, k))
        xw = x @ W + b  # (N, T, 4k)
        cache = []
        hs = np.empty((n, t_steps, k))
        for t in range(t_steps):
            z = xw[:, t] + h @ U
            i = ops.sigmoid(z[:, :k])
            f = ops.sigmoid(z[:, k:2 * k])
            o = ops.sigmoid(z[:, 2 * k:3 * k])
            a = np.tanh(z[:, 3 * k:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * a
            tc = np.tanh(c)
            h = o * tc
            cache.append((h_prev, c_prev, i, f, o, a, tc))
            hs[:, t] = h
        self._x, self._cache = x, cache
        return hs if self.return_sequences else h

    def backward(self, grad):
        x, cache = self._x, self._cache
        n, t_steps, _ = x.shape
        k = self.units
        W, U = self.params["W"], self.params["U"]
        if not self.return_sequences:
            g = np.zeros((n, t_steps, k))
            g[:, -1] = grad
            grad = g
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros_like(self.params["b"])
        dx = np.empty_like(x)
        dh_next = np.zeros((n, k))
        dc_next = np.zeros((n, k))
        for t in range(t_steps - 1, -1, -1):
            h_prev, c_prev, i, f, o, a, tc = cache[t]
            dh = grad[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc**2) + dc_next
            di = dc * a
            df = dc * c_prev
            da = dc * i
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o),
                                 da * (1 - a**2)], axis=1)
            dW += x[:, t].T @ dz
            dU += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, t] = dz @ W.T
            dh_next = dz @ U.T
            dc_next = dc * f
        self.grads["W"], self.grads["U"], self.grads["b"] = dW, dU, db
        return dx

    def output_shape(self, input_shape):
        t_steps, d = input_shape
        if d != self.input_dim:
            raise ShapeError(f"LSTM expects input dim {self.input_dim}, got {d}")
        return (t_steps, self.units) if self.return_sequences else (self.units,)

    def config(self):
        return {"kind": self.kind, "input_dim": self.input_dim, "units": self.units,
                "return_sequences": self.return_sequences}


LAYER_KINDS = {cls.kind: cls for cls in
               (Conv2D, MaxPool2D, ReLU, GlobalAveragePool, Dense, Reshape, LSTM)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ShapeError(f"unknown layer kind {kind!r}") from None
    if kind == "reshape":
        return cls(cfg["shape"], cfg.get("n_features"))
    return cls(**cfg)
