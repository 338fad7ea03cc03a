import numpy as np
import pytest

from app.activations import ActivationKind
from app.data import LabeledDataset
from app.errors import EmptyDatasetError, LabelRangeError, NonFiniteLossError, ShapeError
from app.kernels.loss import softmax_cross_entropy
from app.network import build
from app.schemas import TrainConfig
from app.training import predict, predict_labels, sgd_step, train
from tests.conftest import small_model, toy_images


def test_sgd_plain_step():
    params = {"w": np.zeros(3)}
    sgd_step(params, {"w": np.ones(3)}, {}, TrainConfig(learning_rate=0.1, momentum=0.0))
    np.testing.assert_allclose(params["w"], -0.1)


def test_sgd_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    velocity = {"w": np.zeros(2)}
    sgd_step(params, {"w": np.zeros(2)}, velocity, TrainConfig())
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_sgd_momentum_accumulates():
    config = TrainConfig(learning_rate=0.1, momentum=0.5)
    params, velocity = {"w": np.zeros(1)}, {}
    sgd_step(params, {"w": np.ones(1)}, velocity, config)
    sgd_step(params, {"w": np.ones(1)}, velocity, config)
    # v1 = -0.1, v2 = 0.5 * -0.1 - 0.1
    np.testing.assert_allclose(velocity["w"], [-0.15])
    np.testing.assert_allclose(params["w"], [-0.25])


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, TrainConfig())


def test_loss_decreases_on_separable_toy_data(toy_dataset):
    net = build(small_model(), seed=0)
    config = TrainConfig(learning_rate=0.05, batch_size=4, epochs=20, seed=0)
    history = train(net, toy_dataset, config)
    assert len(history.epoch_losses) == 20
    assert history.epoch_losses[-1] < history.epoch_losses[0]


def test_single_full_batch_epoch_is_one_step(toy_dataset):
    config = TrainConfig(learning_rate=0.1, batch_size=len(toy_dataset), epochs=1, shuffle=False)
    net = build(small_model(), seed=5)
    reference = build(small_model(), seed=5)
    logits, cache = reference.forward(toy_dataset.images, train_mode=True)
    _, grad_logits = softmax_cross_entropy(logits, toy_dataset.labels)
    grads = reference.backward(cache, grad_logits)

    history = train(net, toy_dataset, config)
    assert history.steps == 1
    for name, grad in grads.items():
        np.testing.assert_allclose(
            net.params[name], reference.params[name] - 0.1 * grad, rtol=1e-5, atol=1e-7
        )


def test_training_is_deterministic(toy_dataset, train_config):
    a = train(build(small_model(dropout_rate=0.3), seed=1), toy_dataset, train_config)
    b = train(build(small_model(dropout_rate=0.3), seed=1), toy_dataset, train_config)
    assert a.epoch_losses == b.epoch_losses
    assert a.grad_norms == b.grad_norms


def test_history_accounting(toy_dataset, train_config):
    history = train(build(small_model(), seed=0), toy_dataset, train_config)
    # 16 samples in batches of 4
    assert history.steps == 4 * train_config.epochs
    assert len(history.epoch_seconds) == train_config.epochs
    assert history.total_seconds >= sum(history.epoch_seconds) * 0.99
    assert set(history.grad_norms) >= {"conv1.weight", "logits.bias"}


def test_partial_last_batch_is_kept(train_config):
    dataset = toy_images(5)
    config = train_config.model_copy(update={"epochs": 1})
    history = train(build(small_model(), seed=0), dataset, config)
    assert history.steps == 3


def test_nan_loss_is_reported(toy_dataset, train_config):
    net = build(small_model(), seed=0)
    net.params["logits.bias"][0] = np.nan
    with pytest.raises(NonFiniteLossError, match="epoch 1"):
        train(net, toy_dataset, train_config)


def test_train_checks_dataset(train_config):
    dataset = toy_images(4)
    with pytest.raises(ShapeError):
        train(build(small_model(input_h=9), seed=0), dataset, train_config)
    with pytest.raises(EmptyDatasetError):
        train(build(small_model(), seed=0), dataset.take([]), train_config)
    with pytest.raises(LabelRangeError):
        train(build(small_model(), seed=0), _three_class(dataset), train_config)


def _three_class(dataset):
    labels = dataset.labels.copy()
    labels[0] = 2
    return LabeledDataset(dataset.images, labels, ["a", "b", "c"])


def test_predict_labels_tie_breaks_low():
    assert predict_labels(np.array([[0.1, 0.9], [0.5, 0.5]])).tolist() == [1, 0]


def test_predict_batches(toy_dataset):
    net = build(small_model(), seed=0)
    preds, seconds = predict(net, toy_dataset, batch_size=3)
    full = predict_labels(net.forward(toy_dataset.images)[0])
    np.testing.assert_array_equal(preds, full)
    assert seconds >= 0


def conv1_grad_norms(kind: ActivationKind, dataset) -> list[float]:
    """Train with every conv1 pre-activation pushed below zero."""
    net = build(small_model(activation=kind), seed=3)
    # Inputs lie in [0, 1], so w >= 0 with sum(w) < 0.5 keeps w.x + b below zero
    weight = np.abs(net.params["conv1.weight"])
    net.params["conv1.weight"][...] = 0.4 * weight / weight.sum(axis=(0, 1, 2), keepdims=True)
    net.params["conv1.bias"][...] = -1.0
    config = TrainConfig(learning_rate=0.01, momentum=0.9, batch_size=4, epochs=3, seed=0)
    return train(net, dataset, config).grad_norms["conv1.weight"]


def test_dead_relu_layer_gets_no_gradient(toy_dataset):
    assert conv1_grad_norms(ActivationKind.RELU, toy_dataset) == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("kind", [ActivationKind.QRELU, ActivationKind.MQRELU])
def test_quantum_relus_keep_gradient_flowing(kind, toy_dataset):
    norms = conv1_grad_norms(kind, toy_dataset)
    assert len(norms) == 3
    assert all(norm > 0 for norm in norms)
