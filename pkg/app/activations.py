"""The eleven evaluated activation functions.

Every kind has a scalar forward and derivative plus tensor-level `apply` and
`apply_backward`. All kinds act elementwise except CReLU, which doubles the
last (channel/feature) axis, and Softmax, which normalizes along it.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from app.errors import InvalidArgumentError, ShapeError

Array = npt.NDArray[np.floating]


class ActivationKind(StrEnum):
    """Activation kinds addressable by their canonical CLI/config names."""

    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    CRELU = "crelu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTMAX = "softmax"
    VLRELU = "vlrelu"
    ELU = "elu"
    SELU = "selu"
    QRELU = "qrelu"
    MQRELU = "m_qrelu"

    @classmethod
    def parse(cls, name: str | ActivationKind) -> ActivationKind:
        """Resolve a canonical name, raising a readable error otherwise."""
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            names = ", ".join(kind.value for kind in cls)
            raise InvalidArgumentError(
                f"Unknown activation '{name}', expected one of: {names}"
            ) from None


class ActivationParams(BaseModel):
    """Fixed coefficients of the parametric activations."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha_leaky: float = Field(default=0.01, gt=0)
    alpha_vl: float = Field(default=0.3, gt=0)
    alpha_elu: float = Field(default=1.0, gt=0)
    selu_lambda: float = Field(default=1.0507, gt=0)
    selu_alpha: float = Field(default=1.67326, gt=0)
    # Coefficient of the negative branch of QReLU / m-QReLU
    alpha_q: float = Field(default=0.01, gt=0)


DEFAULT_PARAMS = ActivationParams()

# Kinds whose negative branch is never flat, so units cannot die
NON_DYING = frozenset(
    {
        ActivationKind.QRELU,
        ActivationKind.MQRELU,
        ActivationKind.LEAKY_RELU,
        ActivationKind.VLRELU,
        ActivationKind.ELU,
        ActivationKind.SELU,
        ActivationKind.SIGMOID,
        ActivationKind.TANH,
    }
)

# Kinds with a non-differentiable point at z == 0
PIECEWISE = frozenset(
    {
        ActivationKind.RELU,
        ActivationKind.LEAKY_RELU,
        ActivationKind.CRELU,
        ActivationKind.VLRELU,
        ActivationKind.ELU,
        ActivationKind.SELU,
        ActivationKind.QRELU,
        ActivationKind.MQRELU,
    }
)

Elementwise = Callable[[Array, ActivationParams], Array]


def _sigmoid(z: Array) -> Array:
    # exp(-log(1 + e^-z)) never overflows
    return np.exp(-np.logaddexp(0.0, -z))


def _relu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, z, 0.0).astype(z.dtype)


def _d_relu(z: Array, p: ActivationParams) -> Array:
    return (z > 0).astype(z.dtype)


def _elu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, z, p.alpha_elu * np.expm1(np.minimum(z, 0))).astype(z.dtype)


def _d_elu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, 1.0, p.alpha_elu * np.exp(np.minimum(z, 0))).astype(z.dtype)


def _selu(z: Array, p: ActivationParams) -> Array:
    neg = p.selu_alpha * np.expm1(np.minimum(z, 0))
    return (p.selu_lambda * np.where(z > 0, z, neg)).astype(z.dtype)


def _d_selu(z: Array, p: ActivationParams) -> Array:
    neg = p.selu_alpha * np.exp(np.minimum(z, 0))
    return (p.selu_lambda * np.where(z > 0, 1.0, neg)).astype(z.dtype)


def _qrelu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, z, p.alpha_q * z - 2 * z).astype(z.dtype)


def _d_qrelu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, 1.0, p.alpha_q - 2).astype(z.dtype)


def _mqrelu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, z, p.alpha_q * z - z).astype(z.dtype)


def _d_mqrelu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, 1.0, p.alpha_q - 1).astype(z.dtype)


def _sigmoid_fwd(z: Array, p: ActivationParams) -> Array:
    return _sigmoid(z)


def _d_sigmoid(z: Array, p: ActivationParams) -> Array:
    s = _sigmoid(z)
    return s * (1 - s)


def _tanh(z: Array, p: ActivationParams) -> Array:
    return np.tanh(z)


def _d_tanh(z: Array, p: ActivationParams) -> Array:
    return 1 - np.tanh(z) ** 2


def _softmax_singleton(z: Array, p: ActivationParams) -> Array:
    # A lone element normalized over its own group
    return np.ones_like(z)


def _d_softmax_singleton(z: Array, p: ActivationParams) -> Array:
    return np.zeros_like(z)


def _leaky_fwd(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, z, p.alpha_leaky * z).astype(z.dtype)


def _d_leaky(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, 1.0, p.alpha_leaky).astype(z.dtype)


def _vlrelu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, z, p.alpha_vl * z).astype(z.dtype)


def _d_vlrelu(z: Array, p: ActivationParams) -> Array:
    return np.where(z > 0, 1.0, p.alpha_vl).astype(z.dtype)


# Scalar view of every kind; CReLU is seen through its first (ReLU) half
_REGISTRY: dict[ActivationKind, tuple[Elementwise, Elementwise]] = {
    ActivationKind.RELU: (_relu, _d_relu),
    ActivationKind.LEAKY_RELU: (_leaky_fwd, _d_leaky),
    ActivationKind.CRELU: (_relu, _d_relu),
    ActivationKind.SIGMOID: (_sigmoid_fwd, _d_sigmoid),
    ActivationKind.TANH: (_tanh, _d_tanh),
    ActivationKind.SOFTMAX: (_softmax_singleton, _d_softmax_singleton),
    ActivationKind.VLRELU: (_vlrelu, _d_vlrelu),
    ActivationKind.ELU: (_elu, _d_elu),
    ActivationKind.SELU: (_selu, _d_selu),
    ActivationKind.QRELU: (_qrelu, _d_qrelu),
    ActivationKind.MQRELU: (_mqrelu, _d_mqrelu),
}


def activate(
    kind: ActivationKind | str,
    z: float,
    params: ActivationParams = DEFAULT_PARAMS,
) -> float:
    """Scalar forward value. z == 0 takes the non-positive branch."""
    forward, _ = _REGISTRY[ActivationKind.parse(kind)]
    return float(forward(np.asarray(z, dtype=np.float64), params))


def derivative(
    kind: ActivationKind | str,
    z: float,
    params: ActivationParams = DEFAULT_PARAMS,
) -> float:
    """Scalar derivative; at z == 0 the non-positive branch slope is returned."""
    _, grad = _REGISTRY[ActivationKind.parse(kind)]
    return float(grad(np.asarray(z, dtype=np.float64), params))


def softmax(z: Array, axis: int = -1) -> Array:
    """Softmax along `axis` with max subtraction."""
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class ActivationCache:
    """Forward input (and output where the backward needs it)."""

    kind: ActivationKind
    x: Array
    y: Array


def output_channels(kind: ActivationKind, channels: int) -> int:
    """Size of the last axis after applying `kind`."""
    return 2 * channels if kind is ActivationKind.CRELU else channels


def apply(
    kind: ActivationKind | str,
    x: Array,
    params: ActivationParams = DEFAULT_PARAMS,
) -> tuple[Array, ActivationCache]:
    """Apply an activation to an [N,H,W,C] or [N,D] tensor."""
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.CRELU:
        y = np.concatenate([_relu(x, params), _relu(-x, params)], axis=-1)
    elif kind is ActivationKind.SOFTMAX:
        y = softmax(x, axis=-1)
    else:
        forward, _ = _REGISTRY[kind]
        y = forward(x, params)
    return y.astype(x.dtype, copy=False), ActivationCache(kind=kind, x=x, y=y)


def apply_backward(
    cache: ActivationCache,
    grad_out: Array,
    params: ActivationParams = DEFAULT_PARAMS,
) -> Array:
    """Chain rule through `apply`."""
    if grad_out.shape != cache.y.shape:
        raise ShapeError(
            f"{cache.kind} backward expects grad of shape {cache.y.shape}, "
            f"got {grad_out.shape}"
        )
    x = cache.x
    if cache.kind is ActivationKind.CRELU:
        c = x.shape[-1]
        grad_pos, grad_neg = grad_out[..., :c], grad_out[..., c:]
        return (grad_pos * (x > 0) - grad_neg * (-x > 0)).astype(x.dtype)
    if cache.kind is ActivationKind.SOFTMAX:
        y = cache.y
        dot = np.sum(grad_out * y, axis=-1, keepdims=True)
        return (y * (grad_out - dot)).astype(x.dtype)
    _, grad = _REGISTRY[cache.kind]
    return (grad_out * grad(x, params)).astype(x.dtype)


def local_gradients(
    kind: ActivationKind | str,
    x: Array,
    params: ActivationParams = DEFAULT_PARAMS,
) -> Array:
    """Per-output-unit local derivative d y_i / d x_i, shaped like `apply`'s output."""
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.CRELU:
        return np.concatenate(
            [(x > 0).astype(x.dtype), -(-x > 0).astype(x.dtype)], axis=-1
        )
    if kind is ActivationKind.SOFTMAX:
        y = softmax(x, axis=-1)
        return y * (1 - y)
    _, grad = _REGISTRY[kind]
    return grad(x, params)


__all__ = [
    "ActivationCache",
    "ActivationKind",
    "ActivationParams",
    "DEFAULT_PARAMS",
    "NON_DYING",
    "PIECEWISE",
    "activate",
    "apply",
    "apply_backward",
    "derivative",
    "local_gradients",
    "output_channels",
    "softmax",
]
