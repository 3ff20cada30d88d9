"""Rank-4 tensor container used by every layer of the network.

Layout is fixed globally: (batch, channel, row, col), row-major, float32
storage. Reductions accumulate in float64 so that desk-scale gradient
checks stay meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError

# Guard against absurd allocation requests before numpy sees them.
_MAX_ELEMENTS = 1 << 40


def _check_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dims (n,c,h,w), got {shape}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dims must be >= 1, got {shape}")
    n, c, h, w = shape
    if n * c * h * w > _MAX_ELEMENTS:
        raise ShapeError(f"shape {shape} overflows the element budget")
    return shape


class Tensor4:
    """Dense (n, c, h, w) float32 array with an optional gradient buffer.

    The gradient buffer is lazily allocated (zero-filled) on first access
    through :meth:`ensure_grad`; it always mirrors the data shape.
    """

    __slots__ = ("data", "_grad")

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        _check_shape(data.shape)
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        self.data = data
        self._grad: np.ndarray | None = None

    @classmethod
    def zeros(cls, shape: Iterable[int]) -> "Tensor4":
        return cls(np.zeros(_check_shape(shape), dtype=np.float32))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def grad(self) -> np.ndarray | None:
        return self._grad

    def ensure_grad(self) -> np.ndarray:
        """Return the gradient buffer, allocating zeros on first use."""
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        if self._grad is not None:
            self._grad.fill(0.0)

    def copy(self) -> "Tensor4":
        t = Tensor4(self.data.copy())
        if self._grad is not None:
            t._grad = self._grad.copy()
        return t

    def __getitem__(self, idx):
        return self.data[idx]

    def __setitem__(self, idx, value):
        self.data[idx] = value

    def __repr__(self):
        return f"Tensor4(shape={self.shape})"


def zeros(shape: Iterable[int]) -> Tensor4:
    """All-zero tensor of the given (n, c, h, w) shape."""
    return Tensor4.zeros(shape)


def map_elementwise(t: Tensor4, f: Callable[[float], float]) -> Tensor4:
    """Apply a scalar function elementwise, preserving shape.

    ``f`` receives one value at a time, so it may be any Python callable;
    the result is cast back to float32.
    """
    out = np.vectorize(f, otypes=[np.float32])(t.data)
    return Tensor4(out.reshape(t.shape))


def reduce_per_image(t: Tensor4, kind: str) -> np.ndarray:
    """Per-batch-item statistic over all c*h*w elements.

    ``kind`` is "mean" or "variance"; variance is the biased (population)
    form. Accumulation happens in float64, the result is one float64 per
    batch item.
    """
    flat = t.data.reshape(t.shape[0], -1).astype(np.float64)
    if kind == "mean":
        return flat.mean(axis=1)
    if kind == "variance":
        return flat.var(axis=1)
    raise ValueError(f"unknown reduction kind: {kind!r}")
