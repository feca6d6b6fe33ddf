"""Functional forward/backward kernels.

Images are channel-last, batched: (N, H, W, C). Conv filters are stored as
(F, F, C_in, K). Everything runs in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def conv_output_size(size: int, extent: int, stride: int, pad_total: int, axis: str = "W") -> int:
    """(size - extent + pad_total) / stride + 1, which must come out integral."""
    span = size - extent + pad_total
    if span < 0 or span % stride:
        raise ShapeError(
            f"axis {axis}: ({size} - {extent} + {pad_total}) / {stride} + 1 is not a "
            f"positive integer")
    return span // stride + 1


def same_padding(extent: int) -> int:
    if extent % 2 == 0:
        raise ShapeError(f"same padding needs an odd filter extent, got {extent}")
    return (extent - 1) // 2


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def im2col(x, extent: int, stride: int = 1, padding: int = 0):
    """Patch matrix of shape (N, H2, W2, F*F*C), patch entries ordered (F, F, C)."""
    n, h, wd, c = x.shape
    h2 = conv_output_size(h, extent, stride, 2 * padding, "H")
    w2 = conv_output_size(wd, extent, stride, 2 * padding, "W")
    win = sliding_window_view(_pad(x, padding), (extent, extent), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :h2, :w2]  # (N, H2, W2, C, F, F)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, h2, w2, extent * extent * c)


def conv2d_forward(x, w, b, stride: int = 1, padding: int = 0, cols=None):
    """Cross-correlation of (N, H, W, C) with (F, F, C, K) filters plus bias."""
    f, f2, c_in, k = w.shape
    if f != f2 or c_in != x.shape[-1]:
        raise ShapeError(f"filter {w.shape} does not match input channels {x.shape[-1]}")
    if cols is None:
        cols = im2col(x, f, stride, padding)
    return cols @ w.reshape(-1, k) + b


def conv2d_backward(grad, x, w, stride: int = 1, padding: int = 0, need_input_grad=True,
                    cols=None):
    """Returns (dx, dw, db); dx is None when ``need_input_grad`` is false.

    dx is the transpose of the forward patch gather, which is the same as a
    full convolution of ``grad`` with the spatially flipped filters.
    """
    f, _, c, k = w.shape
    n, h2, w2, _ = grad.shape
    if cols is None:
        cols = im2col(x, f, stride, padding)
    g2 = grad.reshape(-1, k)
    dw = (cols.reshape(-1, cols.shape[-1]).T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dcols = (g2 @ w.reshape(-1, k).T).reshape(n, h2, w2, f, f, c)
    xp_shape = (n, x.shape[1] + 2 * padding, x.shape[2] + 2 * padding, c)
    dxp = np.zeros(xp_shape)
    hs, ws = stride * (h2 - 1) + 1, stride * (w2 - 1) + 1
    for i in range(f):
        for j in range(f):
            dxp[:, i:i + hs:stride, j:j + ws:stride, :] += dcols[:, :, :, i, j, :]
    if padding:
        dxp = dxp[:, padding:-padding, padding:-padding, :]
    return dxp, dw, db


def maxpool2d_forward(x, extent: int, stride: int | None = None):
    """Window maxima; ties go to the first window entry in row-major order.

    Returns (out, argmax) where argmax indexes the flattened F*F window.
    """
    stride = extent if stride is None else stride
    n, h, wd, c = x.shape
    h2 = conv_output_size(h, extent, stride, 0, "H")
    w2 = conv_output_size(wd, extent, stride, 0, "W")
    win = sliding_window_view(x, (extent, extent), axis=(1, 2))[:, ::stride, ::stride]
    win = win[:, :h2, :w2].reshape(n, h2, w2, c, extent * extent)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2d_backward(grad, arg, input_shape, extent: int, stride: int | None = None):
    stride = extent if stride is None else stride
    n, h2, w2, c = grad.shape
    di, dj = np.divmod(arg, extent)
    rows = np.arange(h2)[None, :, None, None] * stride + di
    cols = np.arange(w2)[None, None, :, None] * stride + dj
    nn_ = np.broadcast_to(np.arange(n)[:, None, None, None], grad.shape)
    cc = np.broadcast_to(np.arange(c)[None, None, None, :], grad.shape)
    dx = np.zeros(input_shape)
    if stride >= extent:
        dx[nn_, rows, cols, cc] = grad  # windows are disjoint
    else:
        np.add.at(dx, (nn_, rows, cols, cc), grad)
    return dx


def global_average_pool_forward(x):
    return x.mean(axis=(1, 2))


def global_average_pool_backward(grad, input_shape):
    n, h, w, c = input_shape
    return np.broadcast_to(grad[:, None, None, :] / (h * w), input_shape).copy()


def dense_forward(x, w, b):
    """x (N, n_in) @ w (n_in, n_out) + b."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense expects {w.shape[0]} inputs, got {x.shape[-1]}")
    return x @ w + b


def dense_backward(grad, x, w):
    return grad @ w.T, x.T @ grad, grad.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, x):
    # derivative at exactly 0 is taken as 0
    return grad * (x > 0)


def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def mse_loss(pred, target):
    """Mean over every element; returns (loss, dloss/dpred)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size
