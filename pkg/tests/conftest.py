import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from app.data import LabeledDataset, write_idx
from app.schemas import ConvSpec, ModelConfig, TrainConfig

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))

MNIST_DIR = os.getenv("QRELU_LAB_MNIST_DIR")

requires_mnist = pytest.mark.skipif(
    MNIST_DIR is None, reason="set QRELU_LAB_MNIST_DIR to the official MNIST IDX files"
)

# Full 60k/10k training per activation takes CPU-hours
requires_full_mnist = pytest.mark.skipif(
    MNIST_DIR is None or not os.getenv("QRELU_LAB_FULL_MNIST"),
    reason="set QRELU_LAB_MNIST_DIR and QRELU_LAB_FULL_MNIST=1 for the full MNIST protocol",
)


def toy_images(n_per_class: int, seed: int = 0) -> LabeledDataset:
    """8x8 images: class 0 lights the left half, class 1 the right half."""
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 0.2, size=(2 * n_per_class, 8, 8, 1))
    images[:n_per_class, :, :4] += 0.7
    images[n_per_class:, :, 4:] += 0.7
    # 8-bit grid, so the data survive an IDX round trip unchanged
    images = np.rint(images * 255) / 255
    labels = np.repeat([0, 1], n_per_class)
    return LabeledDataset(
        images=images.astype(np.float32),
        labels=labels.astype(np.int64),
        class_names=["left", "right"],
    )


def small_model(**overrides) -> ModelConfig:
    fields = dict(
        input_h=8,
        input_w=8,
        input_c=1,
        conv1=ConvSpec(in_channels=1, out_channels=4, kernel_h=3, kernel_w=3),
        conv2=ConvSpec(in_channels=4, out_channels=4, kernel_h=3, kernel_w=3),
        dense_width=8,
        dropout_rate=0.0,
        num_classes=2,
    )
    return ModelConfig(**(fields | overrides))


@pytest.fixture
def toy_dataset() -> LabeledDataset:
    return toy_images(8)


@pytest.fixture
def model_config() -> ModelConfig:
    return small_model()


@pytest.fixture
def train_config() -> TrainConfig:
    return TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=4, epochs=3, seed=0)


@pytest.fixture
def toy_idx(tmp_path: Path) -> tuple[Path, Path]:
    """The toy dataset written as an IDX pair."""
    return write_idx(
        toy_images(10),
        tmp_path / "toy-images-idx3-ubyte",
        tmp_path / "toy-labels-idx1-ubyte",
    )
