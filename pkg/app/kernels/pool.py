"""Max pooling with floor semantics and first-max tie breaking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from app.kernels.tensor import Tensor, expect_shape
from app.schemas import PoolSpec


@dataclass
class PoolCache:
    input_shape: tuple[int, int, int, int]
    # Winning row-major offset inside each window, shaped like the output
    argmax: npt.NDArray[np.intp]
    spec: PoolSpec


def maxpool_forward(x: Tensor, spec: PoolSpec) -> tuple[Tensor, PoolCache]:
    expect_shape("maxpool input", x, (None, None, None, None))
    n, h, w, c = x.shape
    out_h, out_w = spec.output_hw(h, w)
    win = sliding_window_view(x, (spec.pool_h, spec.pool_w), axis=(1, 2))
    win = win[:, :: spec.stride, :: spec.stride][:, :out_h, :out_w]
    flat = win.reshape(n, out_h, out_w, c, spec.pool_h * spec.pool_w)
    # np.argmax returns the first maximum, i.e. row-major tie breaking
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), PoolCache(input_shape=(n, h, w, c), argmax=argmax, spec=spec)


def maxpool_backward(cache: PoolCache, grad_out: Tensor) -> Tensor:
    """Route each output gradient to its window's winning position."""
    expect_shape("maxpool grad_out", grad_out, cache.argmax.shape)
    spec = cache.spec
    s = spec.stride
    _, out_h, out_w, _ = cache.argmax.shape
    grad_x = np.zeros(cache.input_shape, dtype=grad_out.dtype)
    for k in range(spec.pool_h * spec.pool_w):
        di, dj = divmod(k, spec.pool_w)
        grad_x[
            :, di : di + s * (out_h - 1) + 1 : s, dj : dj + s * (out_w - 1) + 1 : s, :
        ] += np.where(cache.argmax == k, grad_out, 0)
    return grad_x


__all__ = ["PoolCache", "maxpool_backward", "maxpool_forward"]
