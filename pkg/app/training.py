"""Mini-batch SGD with momentum, seeded shuffling and wall-clock accounting."""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict

import numpy as np
import numpy.typing as npt

from app.data import LabeledDataset
from app.errors import EmptyDatasetError, LabelRangeError, NonFiniteLossError, ShapeError
from app.kernels.loss import softmax_cross_entropy
from app.kernels.tensor import check_finite
from app.network import Gradients, Network, Parameters
from app.schemas import TrainConfig, TrainHistory

logger = logging.getLogger("training")

Velocity = dict[str, np.ndarray]


def sgd_step(
    params: Parameters,
    grads: Gradients,
    velocity: Velocity,
    config: TrainConfig,
) -> tuple[Parameters, Velocity]:
    """v <- momentum * v - lr * g; p <- p + v. Updates in place and returns both."""
    for name, grad in grads.items():
        param = params.get(name)
        if param is None or param.shape != grad.shape:
            raise ShapeError(
                f"Gradient '{name}' of shape {grad.shape} has no matching parameter"
            )
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
        elif v.shape != param.shape:
            raise ShapeError(f"Velocity '{name}' has shape {v.shape}, expected {param.shape}")
        v = config.momentum * v - config.learning_rate * grad
        param += v.astype(param.dtype, copy=False)
        velocity[name] = v
    return params, velocity


def _check_dataset(net: Network, dataset: LabeledDataset) -> None:
    if len(dataset) == 0:
        raise EmptyDatasetError("Cannot train on an empty dataset")
    cfg = net.config
    if dataset.image_shape != (cfg.input_h, cfg.input_w, cfg.input_c):
        raise ShapeError(
            f"Images are {dataset.image_shape}, the network expects "
            f"{(cfg.input_h, cfg.input_w, cfg.input_c)}"
        )
    if int(dataset.labels.max()) >= cfg.num_classes:
        raise LabelRangeError(
            f"Label {int(dataset.labels.max())} does not fit a {cfg.num_classes}-class network"
        )


def train(net: Network, dataset: LabeledDataset, config: TrainConfig) -> TrainHistory:
    """Train in place; (seed, config, dataset) fully determine the result."""
    _check_dataset(net, dataset)
    rng = np.random.default_rng(config.seed)
    velocity: Velocity = {}
    history = TrainHistory()
    n = len(dataset)
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        epoch_started = time.perf_counter()
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        norm_sums: defaultdict[str, float] = defaultdict(float)
        steps = 0
        # The last partial batch is kept
        for begin in range(0, n, config.batch_size):
            idx = order[begin : begin + config.batch_size]
            logits, cache = net.forward(dataset.images[idx], train_mode=True, rng=rng)
            loss, grad_logits = softmax_cross_entropy(logits, dataset.labels[idx])
            if not math.isfinite(loss):
                raise NonFiniteLossError(
                    f"Loss became {loss} at epoch {epoch}, step {steps + 1} "
                    f"({net.config.activation})"
                )
            grads = net.backward(cache, grad_logits)
            for name, grad in grads.items():
                norm_sums[name] += float(np.linalg.norm(grad))
            sgd_step(net.params, grads, velocity, config)
            net.mark_updated()
            loss_sum += loss * len(idx)
            steps += 1

        for name, param in net.params.items():
            check_finite(f"parameter {name} after epoch {epoch}", param)
        seconds = time.perf_counter() - epoch_started
        history.epoch_losses.append(loss_sum / n)
        history.epoch_seconds.append(seconds)
        history.steps += steps
        for name, total in norm_sums.items():
            history.grad_norms.setdefault(name, []).append(total / steps)
        logger.info(
            f"[{net.config.activation}] epoch {epoch}/{config.epochs} "
            f"loss={loss_sum / n:.4f} ({seconds:.1f}s)"
        )

    history.total_seconds = time.perf_counter() - started
    return history


def predict_labels(logits: np.ndarray) -> npt.NDArray[np.int64]:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(logits, axis=1).astype(np.int64)


def predict(
    net: Network, dataset: LabeledDataset, batch_size: int = 256
) -> tuple[npt.NDArray[np.int64], float]:
    """Eval-mode predictions and the wall-clock seconds they took."""
    started = time.perf_counter()
    preds = [
        predict_labels(net.forward(dataset.images[begin : begin + batch_size])[0])
        for begin in range(0, len(dataset), batch_size)
    ]
    labels = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return labels, time.perf_counter() - started


__all__ = ["predict", "predict_labels", "sgd_step", "train"]
