"""Validated n-dimensional arrays with an optional gradient buffer.

Everything numerical in this package runs on plain numpy arrays;
``Tensor`` is the thin validated wrapper used at API boundaries where
contracts demand finiteness, an exact shape, or an attached gradient.
"""

import numpy as np

from .errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64


class Tensor:
    """A real-valued array (row-major) plus an optional same-shape gradient.

    Values must be finite; the gradient buffer, when present, must match
    the data shape exactly. Tensors convert transparently to numpy via
    ``np.asarray`` so they can be mixed freely with array code.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None, grad=None):
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE, order="C", copy=True)
        if arr.size and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data must be finite")
        self.data = arr
        self.grad = None
        if grad is not None:
            self.attach_grad(grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def attach_grad(self, grad):
        g = np.asarray(grad, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match data shape {self.data.shape}"
            )
        if g.size and not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient must be finite")
        self.grad = g
        return self

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __getitem__(self, key):
        return self.data[key]

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={'yes' if self.grad is not None else 'no'})"


def as_array(x, dtype=None):
    """Coerce a Tensor or array-like to a finite ndarray, rejecting NaN/inf."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=dtype)
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteError("input contains non-finite values")
    return arr


def as_pixels(x, dtype=None):
    """Like :func:`as_array` but additionally requires values in [0, 1]."""
    arr = as_array(x, dtype=dtype)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"pixel values must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
        )
    return arr
