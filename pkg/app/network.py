"""The two-conv-layer CNN.

conv1 -> act -> pool -> conv2 -> act -> pool -> flatten -> dense -> act
-> dropout -> logits. CReLU channel doubling is resolved from the config when
parameter shapes are derived, so every later layer sees the right width.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from app.activations import ActivationCache, apply, apply_backward
from app.errors import InvalidArgumentError, ShapeError, StaleCacheError
from app.kernels.conv import ConvCache, conv2d_backward, conv2d_forward
from app.kernels.dense import DenseCache, dense_backward, dense_forward
from app.kernels.dropout import dropout_backward, dropout_forward
from app.kernels.pool import PoolCache, maxpool_backward, maxpool_forward
from app.kernels.tensor import DTYPES, Tensor, expect_shape
from app.schemas import ModelConfig

logger = logging.getLogger("network")

Parameters = dict[str, Tensor]
Gradients = dict[str, Tensor]

PARAM_ORDER = (
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense.weight",
    "dense.bias",
    "logits.weight",
    "logits.bias",
)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every parameter, CReLU doubling included."""
    c1, c2 = config.conv1, config.conv2_spec()
    return {
        "conv1.weight": (c1.kernel_h, c1.kernel_w, c1.in_channels, c1.out_channels),
        "conv1.bias": (c1.out_channels,),
        "conv2.weight": (c2.kernel_h, c2.kernel_w, c2.in_channels, c2.out_channels),
        "conv2.bias": (c2.out_channels,),
        "dense.weight": (config.flatten_dim, config.dense_width),
        "dense.bias": (config.dense_width,),
        "logits.weight": (config.hidden_width, config.num_classes),
        "logits.bias": (config.num_classes,),
    }


@dataclass
class ForwardCache:
    """Layer caches of one forward pass, tied to the network state that made it."""

    network_id: int
    version: int
    train_mode: bool
    conv1: ConvCache
    act1: ActivationCache
    pool1: PoolCache
    conv2: ConvCache
    act2: ActivationCache
    pool2: PoolCache
    pool2_shape: tuple[int, ...]
    dense: DenseCache
    act3: ActivationCache
    dropout_mask: Tensor
    logits: DenseCache

    @property
    def activation_caches(self) -> dict[str, ActivationCache]:
        return {"conv1": self.act1, "conv2": self.act2, "dense": self.act3}


class Network:
    """Parameters of the CNN plus the config and seed that produced them."""

    def __init__(self, config: ModelConfig, params: Parameters, seed: int):
        self.config = config
        self.params = params
        self.seed = seed
        # Bumped on every parameter update; forward caches remember it
        self.version = 0
        self._check_params()

    def _check_params(self) -> None:
        shapes = parameter_shapes(self.config)
        if set(self.params) != set(shapes):
            raise ShapeError(
                f"Parameter names {sorted(self.params)} do not match {sorted(shapes)}"
            )
        for name, shape in shapes.items():
            expect_shape(name, self.params[name], shape)

    @property
    def dtype(self) -> type[np.floating]:
        return DTYPES[self.config.dtype]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def feature_shapes(self) -> dict[str, tuple[int, int, int]]:
        return self.config.feature_shapes()

    def mark_updated(self) -> None:
        self.version += 1

    def forward(
        self,
        batch: Tensor,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, ForwardCache]:
        """Logits for an [N,H,W,C] batch; deterministic when train_mode is False."""
        cfg = self.config
        x = np.asarray(batch, dtype=self.dtype)
        expect_shape("batch", x, (None, cfg.input_h, cfg.input_w, cfg.input_c))
        if train_mode and cfg.dropout_rate > 0 and rng is None:
            raise InvalidArgumentError("Train-mode forward needs an rng for dropout")
        p, act_params = self.params, cfg.activation_params

        z1, conv1 = conv2d_forward(x, p["conv1.weight"], p["conv1.bias"], cfg.conv1)
        a1, act1 = apply(cfg.activation, z1, act_params)
        h1, pool1 = maxpool_forward(a1, cfg.pool)

        z2, conv2 = conv2d_forward(h1, p["conv2.weight"], p["conv2.bias"], cfg.conv2_spec())
        a2, act2 = apply(cfg.activation, z2, act_params)
        h2, pool2 = maxpool_forward(a2, cfg.pool)

        flat = h2.reshape(h2.shape[0], -1)
        z3, dense = dense_forward(flat, p["dense.weight"], p["dense.bias"])
        a3, act3 = apply(cfg.hidden_activation, z3, act_params)
        d3, mask = dropout_forward(a3, cfg.dropout_rate, train_mode, rng)

        logits, out = dense_forward(d3, p["logits.weight"], p["logits.bias"])
        cache = ForwardCache(
            network_id=id(self),
            version=self.version,
            train_mode=train_mode,
            conv1=conv1,
            act1=act1,
            pool1=pool1,
            conv2=conv2,
            act2=act2,
            pool2=pool2,
            pool2_shape=h2.shape,
            dense=dense,
            act3=act3,
            dropout_mask=mask,
            logits=out,
        )
        return logits, cache

    def backward(self, cache: ForwardCache, grad_logits: Tensor) -> Gradients:
        """Gradient of every parameter given dLoss/dlogits."""
        if cache.network_id != id(self) or cache.version != self.version:
            raise StaleCacheError(
                "Forward cache belongs to another network or to outdated parameters"
            )
        act_params = self.config.activation_params
        grads: Gradients = {}

        g, grads["logits.weight"], grads["logits.bias"] = dense_backward(
            cache.logits, grad_logits
        )
        g = dropout_backward(cache.dropout_mask, g)
        g = apply_backward(cache.act3, g, act_params)
        g, grads["dense.weight"], grads["dense.bias"] = dense_backward(cache.dense, g)

        g = g.reshape(cache.pool2_shape)
        g = maxpool_backward(cache.pool2, g)
        g = apply_backward(cache.act2, g, act_params)
        g, grads["conv2.weight"], grads["conv2.bias"] = conv2d_backward(cache.conv2, g)

        g = maxpool_backward(cache.pool1, g)
        g = apply_backward(cache.act1, g, act_params)
        _, grads["conv1.weight"], grads["conv1.bias"] = conv2d_backward(cache.conv1, g)
        return {name: grads[name].astype(self.dtype, copy=False) for name in PARAM_ORDER}


def build(config: ModelConfig, seed: int) -> Network:
    """He-initialized network: normal(0, sqrt(2 / fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    dtype = DTYPES[config.dtype]
    params: Parameters = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        # conv weights are [kh, kw, cin, cout], dense weights [fan_in, fan_out]
        fan_in = math.prod(shape[:-1])
        std = math.sqrt(2.0 / fan_in)
        params[name] = (rng.standard_normal(shape) * std).astype(dtype)
    net = Network(config, params, seed)
    logger.debug(
        f"Built {config.activation} network with {net.parameter_count():,} parameters"
    )
    return net


def forward(
    net: Network,
    batch: Tensor,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, ForwardCache]:
    return net.forward(batch, train_mode, rng)


def backward(net: Network, cache: ForwardCache, grad_logits: Tensor) -> Gradients:
    return net.backward(cache, grad_logits)


__all__ = [
    "ForwardCache",
    "Gradients",
    "Network",
    "PARAM_ORDER",
    "Parameters",
    "backward",
    "build",
    "forward",
    "parameter_shapes",
]
