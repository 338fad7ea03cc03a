"""Finite-difference gradient checks and the dead-unit census."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence

import numpy as np

from app.activations import (
    DEFAULT_PARAMS,
    PIECEWISE,
    ActivationKind,
    ActivationParams,
    activate,
    apply,
    derivative,
    local_gradients,
)
from app.errors import EmptyDatasetError, PrecisionError
from app.kernels.loss import softmax_cross_entropy
from app.kernels.tensor import Tensor, expect_shape
from app.network import PARAM_ORDER, ForwardCache, Gradients, Network, build
from app.schemas import (
    DeadUnitCensus,
    GradCheckReport,
    LayerCensus,
    ModelConfig,
    RejectedProbe,
)

logger = logging.getLogger("diagnostics")

SCALAR_THRESHOLD = 1e-6
NETWORK_THRESHOLD = 1e-4
# Gradients below this magnitude are compared in absolute terms
GRAD_FLOOR = 1e-3
# Upper bound on draws per accepted probe before giving up
MAX_DRAWS_PER_PROBE = 20

BackwardFn = Callable[[Network, ForwardCache, Tensor], Gradients]


def gradcheck_scalar(
    kind: ActivationKind | str,
    params: ActivationParams = DEFAULT_PARAMS,
    zs: Sequence[float] = (-3.0, -2.0, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 2.0, 3.0),
    eps: float = 1e-6,
) -> GradCheckReport:
    """Central differences of the scalar activation against its derivative.

    Probes within 10 * eps of the kink at 0 are rejected, not evaluated.
    """
    kind = ActivationKind.parse(kind)
    radius = 10 * eps
    errors: dict[str, float] = {}
    rejected: list[RejectedProbe] = []
    for z in zs:
        if abs(z) <= radius:
            rejected.append(
                RejectedProbe(z=z, reason=f"|z| <= {radius:g}: the difference would straddle z = 0")
            )
            continue
        numeric = (activate(kind, z + eps, params) - activate(kind, z - eps, params)) / (2 * eps)
        analytic = derivative(kind, z, params)
        errors[f"z={z:g}"] = abs(analytic - numeric) / max(1.0, abs(analytic))

    worst = max(errors, key=errors.__getitem__) if errors else None
    max_error = errors[worst] if worst else 0.0
    report = GradCheckReport(
        label=f"{kind} (scalar)",
        errors=errors,
        worst=worst,
        max_error=max_error,
        threshold=SCALAR_THRESHOLD,
        passed=bool(errors) and max_error < SCALAR_THRESHOLD,
        probes=len(errors),
        rejected=rejected,
    )
    if not errors:
        logger.warning(f"{report.label}: every probe was rejected")
    return report


def _kink_signature(cache: ForwardCache) -> list[np.ndarray]:
    """Activation sign masks and pool winners; gradients are smooth while these hold."""
    masks = [
        act.x > 0 for act in cache.activation_caches.values() if act.kind in PIECEWISE
    ]
    return masks + [cache.pool1.argmax, cache.pool2.argmax]


def _same_signature(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b, strict=True))


def _index_label(name: str, index: tuple[int, ...]) -> str:
    return f"{name}[{', '.join(str(int(i)) for i in index)}]"


def gradcheck_network(
    config: ModelConfig,
    seed: int = 0,
    n_probes: int = 50,
    eps: float = 1e-4,
    backward_fn: BackwardFn | None = None,
    batch_size: int = 4,
) -> GradCheckReport:
    """Compare the analytic parameter gradients of a tiny network with central differences.

    Runs in train mode with dropout re-seeded identically on every forward, so
    the loss is a deterministic function of the parameters. Probes whose
    perturbation moves any activation across its kink or changes a pool
    winner are replaced by fresh draws.
    """
    if config.dtype != "float64":
        raise PrecisionError("Network gradient checks need dtype float64")
    backward_fn = backward_fn or Network.backward

    net = build(config, seed)
    rng = np.random.default_rng(seed)
    for name in PARAM_ORDER:
        if name.endswith(".bias"):
            net.params[name] += 0.1 * rng.standard_normal(net.params[name].shape)
    batch = rng.standard_normal((batch_size, config.input_h, config.input_w, config.input_c))
    labels = rng.integers(0, config.num_classes, size=batch_size)
    dropout_seed = seed + 1

    def evaluate() -> tuple[float, ForwardCache, Tensor]:
        logits, cache = net.forward(
            batch, train_mode=True, rng=np.random.default_rng(dropout_seed)
        )
        loss, grad = softmax_cross_entropy(logits, labels)
        return loss, cache, grad

    _, cache, grad_logits = evaluate()
    analytic = backward_fn(net, cache, grad_logits)
    signature = _kink_signature(cache)

    errors: dict[str, float] = {}
    worst, max_error = None, 0.0
    rejected: list[RejectedProbe] = []
    accepted = 0
    for _ in range(n_probes * MAX_DRAWS_PER_PROBE):
        if accepted == n_probes:
            break
        name = PARAM_ORDER[rng.integers(len(PARAM_ORDER))]
        param = net.params[name]
        index = np.unravel_index(rng.integers(param.size), param.shape)
        original = param[index]

        param[index] = original + eps
        loss_plus, cache_plus, _ = evaluate()
        param[index] = original - eps
        loss_minus, cache_minus, _ = evaluate()
        param[index] = original

        label = _index_label(name, index)
        if not (
            _same_signature(signature, _kink_signature(cache_plus))
            and _same_signature(signature, _kink_signature(cache_minus))
        ):
            rejected.append(RejectedProbe(z=float(original), reason=f"{label}: crosses a kink"))
            continue

        numeric = (loss_plus - loss_minus) / (2 * eps)
        value = float(analytic[name][index])
        error = abs(value - numeric) / max(abs(value), abs(numeric), GRAD_FLOOR)
        errors[name] = max(errors.get(name, 0.0), error)
        if worst is None or error > max_error:
            worst, max_error = label, error
        accepted += 1

    if accepted < n_probes:
        logger.warning(f"Only {accepted} of {n_probes} probes avoided every kink")
    report = GradCheckReport(
        label=f"{config.activation} (network)",
        errors=errors,
        worst=worst,
        max_error=max_error,
        threshold=NETWORK_THRESHOLD,
        passed=accepted > 0 and max_error < NETWORK_THRESHOLD,
        probes=accepted,
        rejected=rejected,
    )
    logger.info(
        f"{report.label}: max rel err {max_error:.2e} at {worst} "
        f"({'pass' if report.passed else 'FAIL'})"
    )
    return report


def census_preactivations(
    kind: ActivationKind | str,
    z: np.ndarray,
    params: ActivationParams = DEFAULT_PARAMS,
    name: str = "layer",
) -> LayerCensus:
    """Dead units of one layer given its pre-activations, samples on axis 0."""
    if z.ndim < 2 or z.shape[0] == 0:
        raise EmptyDatasetError(f"{name}: census needs at least one probe sample")
    y, _ = apply(kind, z, params)
    grad = local_gradients(kind, z, params)
    dead = np.all(y == 0, axis=0) & np.all(grad == 0, axis=0)
    count = int(dead.sum())
    return LayerCensus(name=name, total=dead.size, dead=count, dead_fraction=count / dead.size)


def dead_unit_census(net: Network, probe_data: Tensor) -> DeadUnitCensus:
    """Eval-mode census of every activation layer over a probe batch."""
    cfg = net.config
    probe = np.asarray(probe_data)
    expect_shape("probe_data", probe, (None, cfg.input_h, cfg.input_w, cfg.input_c))
    if probe.shape[0] == 0:
        raise EmptyDatasetError("Dead-unit census needs at least one probe sample")
    _, cache = net.forward(probe, train_mode=False)
    layers = [
        census_preactivations(act.kind, act.x, cfg.activation_params, layer)
        for layer, act in cache.activation_caches.items()
    ]
    for layer in layers:
        logger.debug(f"{layer.name}: {layer.dead}/{layer.total} dead")
    return DeadUnitCensus(layers=layers)


__all__ = [
    "BackwardFn",
    "GRAD_FLOOR",
    "NETWORK_THRESHOLD",
    "SCALAR_THRESHOLD",
    "census_preactivations",
    "dead_unit_census",
    "gradcheck_network",
    "gradcheck_scalar",
]
