from __future__ import annotations

from dataclasses import dataclass

from app.kernels.tensor import Tensor, expect_shape


@dataclass
class DenseCache:
    x: Tensor
    weights: Tensor


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> tuple[Tensor, DenseCache]:
    """Affine map [N,D] @ [D,M] + [M]."""
    expect_shape("dense input", x, (None, None))
    d = x.shape[1]
    expect_shape("dense weights", weights, (d, None))
    expect_shape("dense bias", bias, (weights.shape[1],))
    out = (x @ weights + bias).astype(x.dtype, copy=False)
    return out, DenseCache(x=x, weights=weights)


def dense_backward(cache: DenseCache, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias)."""
    expect_shape("dense grad_out", grad_out, (cache.x.shape[0], cache.weights.shape[1]))
    grad_x = grad_out @ cache.weights.T
    grad_w = cache.x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


__all__ = ["DenseCache", "dense_backward", "dense_forward"]
