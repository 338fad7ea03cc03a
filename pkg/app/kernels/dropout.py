"""Inverted dropout: survivors are scaled at train time, inference is identity."""

from __future__ import annotations

import numpy as np

from app.errors import InvalidArgumentError
from app.kernels.tensor import Tensor, expect_shape


def dropout_forward(
    x: Tensor,
    rate: float,
    train_mode: bool,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Returns (output, mask) where mask already carries the 1/(1-rate) scale."""
    if not 0 <= rate < 1:
        raise InvalidArgumentError(f"Dropout rate must lie in [0, 1), got {rate}")
    if not train_mode or rate == 0:
        return x, np.ones_like(x)
    if rng is None:
        raise InvalidArgumentError("Dropout in train mode needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(mask: Tensor, grad_out: Tensor) -> Tensor:
    expect_shape("dropout grad_out", grad_out, mask.shape)
    return grad_out * mask


__all__ = ["dropout_backward", "dropout_forward"]
