"""Numerical kernels: forward ops and their vector-Jacobian products.

Every op works on a batched array whose leading axis is the batch.
Images are channel-last ``(B, H, W, C)``. The ReLU backward rule is
pluggable (standard / deconv / guided); every other op backpropagates
the exact analytic gradient in all modes.
"""

from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


class BackpropMode(Enum):
    STANDARD = "standard"
    DECONV = "deconv"
    GUIDED = "guided"


def coerce_mode(mode):
    if isinstance(mode, BackpropMode):
        return mode
    return BackpropMode(str(mode).lower())


def conv_output_extent(extent, kernel, stride, pad):
    """Spatial output extent: floor((in + 2*pad - kernel) / stride) + 1."""
    out = (extent + 2 * pad - kernel) // stride + 1
    if out <= 0:
        raise ShapeError(
            f"convolution reduces extent {extent} (kernel={kernel}, stride={stride}, "
            f"pad={pad}) to {out}"
        )
    return out


def _im2col(x, kh, kw, stride, pad):
    """Extract patches of a padded (B, H, W, C) array.

    Returns (cols, oh, ow) where cols has shape (B, OH, OW, KH*KW*C) and
    each row is the receptive field in row-major (kh, kw, c) order.
    """
    b, h, w, c = x.shape
    oh = conv_output_extent(h, kh, stride, pad)
    ow = conv_output_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (B, H', W', C, KH, KW)
    win = win[:, ::stride, ::stride][:, :oh, :ow]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b, oh, ow, kh * kw * c), oh, ow


def conv2d(x, weight, bias, stride=1, pad=0):
    """2-D convolution. weight: (KH, KW, CIN, COUT), bias: (COUT,).

    Returns (y, cols); cols is the im2col patch matrix reused by the
    backward pass.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B, H, W, C) input, got shape {x.shape}")
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d input has {x.shape[3]} channels, kernel expects {cin}")
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    y = cols.reshape(-1, kh * kw * cin) @ weight.reshape(kh * kw * cin, cout)
    y = y.reshape(x.shape[0], oh, ow, cout) + bias
    return y, cols


def conv2d_vjp(x, weight, stride, pad, cols, g):
    """Gradients of a conv2d given upstream g of shape (B, OH, OW, COUT)."""
    b, h, w, cin = x.shape
    kh, kw, _, cout = weight.shape
    _, oh, ow, _ = g.shape
    gflat = g.reshape(-1, cout)
    dw = (cols.reshape(-1, kh * kw * cin).T @ gflat).reshape(weight.shape)
    db = gflat.sum(axis=0)
    dcols = (gflat @ weight.reshape(kh * kw * cin, cout).T).reshape(
        b, oh, ow, kh, kw, cin
    )
    dxp = np.zeros((b, h + 2 * pad, w + 2 * pad, cin), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[
                :, :, :, i, j
            ]
    dx = dxp[:, pad : pad + h, pad : pad + w] if pad else dxp
    return dx, dw, db


def dense(x, weight, bias):
    """Affine layer; flattens all non-batch axes."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"dense input has {flat.shape[1]} features, weight expects {weight.shape[0]}"
        )
    return flat @ weight + bias


def dense_vjp(x, weight, g):
    flat = x.reshape(x.shape[0], -1)
    dx = (g @ weight.T).reshape(x.shape)
    dw = flat.T @ g
    db = g.sum(axis=0)
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def relu_vjp(pre, g, mode=BackpropMode.STANDARD):
    """ReLU backward under the selected semantics.

    standard: pass g where the unit was active (pre > 0).
    deconv:   pass g where g >= 0, ignoring activations.
    guided:   pass g only where pre > 0 AND g >= 0.
    """
    mode = coerce_mode(mode)
    if mode is BackpropMode.STANDARD:
        return g * (pre > 0)
    if mode is BackpropMode.DECONV:
        return g * (g >= 0)
    return g * ((pre > 0) & (g >= 0))


def maxpool2d(x, size, stride=None):
    """Max pooling over (size x size) windows per channel.

    Returns (y, argmax) where argmax holds the flat row-major index of
    the first maximal element inside each window (determinism on ties).
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects (B, H, W, C) input, got shape {x.shape}")
    stride = stride or size
    b, h, w, c = x.shape
    oh = conv_output_extent(h, size, stride, 0)
    ow = conv_output_extent(w, size, stride, 0)
    win = sliding_window_view(x, (size, size), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]  # (B, OH, OW, C, size, size)
    flat = win.reshape(b, oh, ow, c, size * size)
    arg = flat.argmax(axis=-1)  # first occurrence wins ties
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2d_vjp(x, size, stride, arg, g):
    stride = stride or size
    b, h, w, c = x.shape
    _, oh, ow, _ = g.shape
    dx = np.zeros_like(x, dtype=g.dtype)
    bi, oi, oj, ci = np.indices((b, oh, ow, c), sparse=False)
    ri = oi * stride + arg // size
    rj = oj * stride + arg % size
    np.add.at(dx, (bi, ri, rj, ci), g)
    return dx


def global_avg_pool(x):
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B, H, W, C), got shape {x.shape}")
    return x.mean(axis=(1, 2))


def global_avg_pool_vjp(x, g):
    b, h, w, c = x.shape
    return np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy()


def softmax(z):
    """Numerically stable softmax over the flattened non-batch axes."""
    flat = z.reshape(z.shape[0], -1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_vjp(p, g):
    g = g.reshape(p.shape)
    return p * (g - (g * p).sum(axis=1, keepdims=True))


def residual_add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"residual add of mismatched shapes {a.shape} and {b.shape}")
    return a + b
