"""Differentiable layer kernels with explicit forward/backward pairs."""

from app.kernels import conv, dense, dropout, loss, pool, tensor

__all__ = ["conv", "dense", "dropout", "loss", "pool", "tensor"]
