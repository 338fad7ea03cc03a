"""Dense tensor helpers. Tensors are row-major NumPy arrays."""

from __future__ import annotations

from collections.abc import Sequence
from typing import Literal

import numpy as np
import numpy.typing as npt

from app.errors import NumericError, ShapeError

Tensor = npt.NDArray[np.floating]
Precision = Literal["float32", "float64"]

DTYPES: dict[str, type[np.floating]] = {
    "float32": np.float32,
    "float64": np.float64,
}


def expect_shape(name: str, array: np.ndarray, shape: Sequence[int | None]) -> None:
    """Check `array.shape` against `shape`; None matches any size."""
    if array.ndim != len(shape) or any(
        want is not None and got != want for got, want in zip(array.shape, shape)
    ):
        pretty = tuple("*" if s is None else s for s in shape)
        raise ShapeError(f"{name}: expected shape {pretty}, got {array.shape}")


def check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{name} contains NaN or Inf")


__all__ = [
    "DTYPES",
    "Precision",
    "Tensor",
    "check_finite",
    "expect_shape",
]
