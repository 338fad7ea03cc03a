"""2-D convolution over N,H,W,C tensors via sliding windows + tensordot."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.kernels.tensor import Tensor, expect_shape
from app.schemas import ConvSpec


@dataclass
class ConvCache:
    """What conv2d_backward needs from the forward pass."""

    x_padded: Tensor
    input_shape: tuple[int, int, int, int]
    weights: Tensor
    spec: ConvSpec
    offsets: tuple[int, int]
    output_shape: tuple[int, int, int, int]


def _windows(x_padded: Tensor, spec: ConvSpec, out_h: int, out_w: int) -> Tensor:
    # (N, H', W', C, kh, kw) read-only view
    win = sliding_window_view(x_padded, (spec.kernel_h, spec.kernel_w), axis=(1, 2))
    return win[:, :: spec.stride, :: spec.stride][:, :out_h, :out_w]


def _check_weights(weights: Tensor, bias: Tensor, spec: ConvSpec) -> None:
    expect_shape(
        "conv2d weights",
        weights,
        (spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels),
    )
    expect_shape("conv2d bias", bias, (spec.out_channels,))


def conv2d_forward(
    x: Tensor, weights: Tensor, bias: Tensor, spec: ConvSpec
) -> tuple[Tensor, ConvCache]:
    """[N,H,W,Cin] * [kh,kw,Cin,Cout] + [Cout] -> [N,H',W',Cout]."""
    expect_shape("conv2d input", x, (None, None, None, spec.in_channels))
    _check_weights(weights, bias, spec)
    n, h, w, _ = x.shape
    out_h, out_w = spec.output_hw(h, w)
    (top, bottom), (left, right) = spec.padding_hw(h, w)
    x_padded = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))

    win = _windows(x_padded, spec, out_h, out_w)
    out = np.tensordot(win, weights, axes=([4, 5, 3], [0, 1, 2])) + bias
    out = out.astype(x.dtype, copy=False)
    cache = ConvCache(
        x_padded=x_padded,
        input_shape=(n, h, w, spec.in_channels),
        weights=weights,
        spec=spec,
        offsets=(top, left),
        output_shape=out.shape,
    )
    return out, cache


def conv2d_backward(cache: ConvCache, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias)."""
    expect_shape("conv2d grad_out", grad_out, cache.output_shape)
    spec = cache.spec
    _, out_h, out_w, _ = cache.output_shape
    s = spec.stride

    win = _windows(cache.x_padded, spec, out_h, out_w)
    grad_w = np.tensordot(win, grad_out, axes=([0, 1, 2], [0, 1, 2]))
    grad_w = np.ascontiguousarray(grad_w.transpose(1, 2, 0, 3))
    grad_b = grad_out.sum(axis=(0, 1, 2))

    # Scatter back one kernel offset at a time; fixed order keeps sums reproducible
    grad_padded = np.zeros_like(cache.x_padded)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            grad_padded[
                :, i : i + s * (out_h - 1) + 1 : s, j : j + s * (out_w - 1) + 1 : s, :
            ] += grad_out @ cache.weights[i, j].T

    _, h, w, _ = cache.input_shape
    top, left = cache.offsets
    grad_x = np.ascontiguousarray(grad_padded[:, top : top + h, left : left + w, :])
    return grad_x, grad_w.astype(grad_out.dtype, copy=False), grad_b


__all__ = ["ConvCache", "conv2d_backward", "conv2d_forward"]
