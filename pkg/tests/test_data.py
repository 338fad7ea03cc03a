import gzip
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from app.data import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    LabeledDataset,
    check_compatible,
    classes_sidecar,
    ingest_image_dir,
    load_datasets,
    load_mnist_idx,
    split,
    subset,
    write_idx,
)
from app.errors import (
    BadMagicError,
    ClassMismatchError,
    CountMismatchError,
    DataError,
    EmptyDatasetError,
    ImageDecodeError,
    StratificationError,
    TruncatedPayloadError,
)
from app.schemas import DataConfig, IngestConfig
from tests.conftest import MNIST_DIR, requires_mnist, toy_images


def write_raw_idx(tmp_path: Path, pixels: bytes, dims, labels: bytes, image_magic=IDX_IMAGES_MAGIC):
    images = tmp_path / "images-idx3-ubyte"
    images.write_bytes(struct.pack(f">I{len(dims)}I", image_magic, *dims) + pixels)
    label_file = tmp_path / "labels-idx1-ubyte"
    label_file.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels)
    return images, label_file


def test_single_image_fixture(tmp_path):
    images, labels = write_raw_idx(tmp_path, bytes([0, 255, 0, 255]), (1, 2, 2), bytes([3]))
    dataset = load_mnist_idx(images, labels)
    assert dataset.images.shape == (1, 2, 2, 1)
    assert dataset.images.reshape(-1).tolist() == [0.0, 1.0, 0.0, 1.0]
    assert dataset.labels.tolist() == [3]
    assert dataset.class_names == ["0", "1", "2", "3"]


def test_gzip_files(tmp_path):
    images, labels = write_raw_idx(tmp_path, bytes(range(8)), (2, 2, 2), bytes([0, 1]))
    for path in (images, labels):
        gz = path.with_name(path.name + ".gz")
        gz.write_bytes(gzip.compress(path.read_bytes()))
    dataset = load_mnist_idx(images.with_name(images.name + ".gz"), labels.with_name(labels.name + ".gz"))
    assert len(dataset) == 2


def test_bad_magic(tmp_path):
    images, labels = write_raw_idx(tmp_path, bytes(4), (1, 2, 2), bytes([0]), image_magic=0x0801)
    with pytest.raises(BadMagicError, match="bad magic"):
        load_mnist_idx(images, labels)


def test_truncated_payload(tmp_path):
    images, labels = write_raw_idx(tmp_path, bytes(3), (1, 2, 2), bytes([0]))
    with pytest.raises(TruncatedPayloadError):
        load_mnist_idx(images, labels)


def test_count_mismatch(tmp_path):
    images, labels = write_raw_idx(tmp_path, bytes(8), (2, 2, 2), bytes([0]))
    with pytest.raises(CountMismatchError):
        load_mnist_idx(images, labels)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(DataError, match="nowhere-idx3-ubyte"):
        load_mnist_idx(tmp_path / "nowhere-idx3-ubyte", tmp_path / "labels")


def test_write_idx_roundtrip(tmp_path):
    dataset = toy_images(3)
    images, labels = write_idx(dataset, tmp_path / "a-images", tmp_path / "a-labels")
    assert json.loads(classes_sidecar(labels).read_text()) == ["left", "right"]
    loaded = load_mnist_idx(images, labels)
    np.testing.assert_array_equal(loaded.images, dataset.images)
    np.testing.assert_array_equal(loaded.labels, dataset.labels)
    assert loaded.class_names == dataset.class_names


def test_write_idx_rgb(tmp_path):
    rng = np.random.default_rng(0)
    images = (rng.integers(0, 256, size=(2, 4, 4, 3)) / 255).astype(np.float32)
    dataset = LabeledDataset(images, np.array([0, 1]), ["a", "b"])
    loaded = load_mnist_idx(*write_idx(dataset, tmp_path / "rgb-images", tmp_path / "rgb-labels"))
    assert loaded.images.shape == (2, 4, 4, 3)
    np.testing.assert_array_equal(loaded.images, dataset.images)


def test_dataset_validation():
    with pytest.raises(CountMismatchError):
        LabeledDataset(np.zeros((2, 2, 2, 1), np.float32), np.array([0]), ["a"])
    with pytest.raises(DataError):
        LabeledDataset(np.full((1, 2, 2, 1), 2.0, np.float32), np.array([0]), ["a"])


def save_png(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels.astype(np.uint8)).save(path)


def test_ingest_class_directories(tmp_path):
    rng = np.random.default_rng(0)
    for cls in ("pd", "healthy"):
        for i in range(2):
            save_png(tmp_path / cls / f"{i}.png", rng.integers(0, 256, size=(40, 30, 3)))
    (tmp_path / "empty").mkdir()
    (tmp_path / "healthy" / "notes.txt").write_text("ignored")

    dataset = ingest_image_dir(tmp_path)
    assert len(dataset) == 4
    assert dataset.class_names == ["healthy", "pd"]
    assert dataset.labels.tolist() == [0, 0, 1, 1]
    assert dataset.image_shape == (28, 28, 1)
    assert dataset.images.min() >= 0 and dataset.images.max() <= 1


def test_ingest_is_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    for i in range(6):
        save_png(tmp_path / "x" / f"{i}.png", rng.integers(0, 256, size=(33, 17)))
    a, b = ingest_image_dir(tmp_path), ingest_image_dir(tmp_path)
    np.testing.assert_array_equal(a.images, b.images)


def test_mid_gray_stays_constant(tmp_path):
    save_png(tmp_path / "gray" / "g.png", np.full((100, 100, 3), 128))
    dataset = ingest_image_dir(tmp_path)
    np.testing.assert_allclose(dataset.images, 128 / 255, atol=1e-6)


def bilinear_matrix(out_size: int, in_size: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights with edge clamping."""
    m = np.zeros((out_size, in_size))
    for i in range(out_size):
        src = min(max((i + 0.5) * in_size / out_size - 0.5, 0.0), in_size - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        m[i, lo] += 1 - frac
        m[i, hi] += frac
    return m


def test_checkerboard_matches_reference_bilinear(tmp_path):
    board = np.kron(np.array([[0, 255], [255, 0]]), np.ones((4, 4)))
    save_png(tmp_path / "board" / "b.png", board)
    dataset = ingest_image_dir(tmp_path, IngestConfig(resample="bilinear"))

    m = bilinear_matrix(28, 8)
    reference = np.rint(m @ (board / 255) @ m.T * 255) / 255
    assert np.abs(dataset.images[0, :, :, 0] - reference).mean() < 1e-3


def test_ingest_keeps_colour_channels(tmp_path):
    save_png(tmp_path / "c" / "a.png", np.full((10, 10, 3), [255, 0, 0]))
    dataset = ingest_image_dir(tmp_path, IngestConfig(grayscale=False, target_h=12, target_w=16))
    assert dataset.image_shape == (12, 16, 3)
    np.testing.assert_allclose(dataset.images[0, 5, 5], [1.0, 0.0, 0.0])


def test_undecodable_image_is_named(tmp_path):
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(ImageDecodeError, match="broken.png"):
        ingest_image_dir(tmp_path)


def test_no_classes(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyDatasetError):
        ingest_image_dir(tmp_path)


def test_stratified_split():
    dataset = toy_images(10)
    train, test = split(dataset, 0.2, seed=0)
    assert np.bincount(train.labels).tolist() == [8, 8]
    assert np.bincount(test.labels).tolist() == [2, 2]
    again_train, _ = split(dataset, 0.2, seed=0)
    np.testing.assert_array_equal(train.images, again_train.images)


def test_split_keeps_one_sample_each_side():
    train, test = split(toy_images(2), 0.01, seed=0)
    assert len(train) == 2 and len(test) == 2


def test_split_needs_two_per_class():
    dataset = toy_images(3).take([0, 1, 2, 3])
    with pytest.raises(StratificationError):
        split(dataset, 0.5, seed=0)


def test_subset_is_roughly_stratified():
    sample = subset(toy_images(50), 20, seed=0)
    assert abs(len(sample) - 20) <= 2
    assert sorted(set(sample.labels.tolist())) == [0, 1]
    assert subset(toy_images(3), 100, seed=0).labels.size == 6


def test_check_compatible():
    a = toy_images(2)
    b = LabeledDataset(a.images, a.labels, ["x", "y"])
    with pytest.raises(ClassMismatchError):
        check_compatible(a, b)


def test_load_datasets_split_and_limits(toy_idx):
    images, labels = toy_idx
    config = DataConfig(train_paths=[images, labels], test_fraction=0.3, train_limit=8)
    train, test = load_datasets(config, seed=0)
    assert len(test) == 6
    assert abs(len(train) - 8) <= 2


def test_load_datasets_separate_test_files(toy_idx):
    images, labels = toy_idx
    config = DataConfig(train_paths=[images, labels], test_paths=[images, labels])
    train, test = load_datasets(config, seed=0)
    assert len(train) == len(test) == 20


def test_image_dir_pipeline_matches_idx(tmp_path):
    rng = np.random.default_rng(2)
    for cls in ("a", "b"):
        for i in range(3):
            save_png(tmp_path / "src" / cls / f"{i}.png", rng.integers(0, 256, size=(50, 50)))
    direct = ingest_image_dir(tmp_path / "src")
    via_idx = load_mnist_idx(*write_idx(direct, tmp_path / "x-images", tmp_path / "x-labels"))
    np.testing.assert_array_equal(direct.images, via_idx.images)
    assert direct.class_names == via_idx.class_names


def test_data_config_path_count():
    with pytest.raises(ValueError):
        DataConfig(source="image_dir", train_paths=["a", "b"])


@requires_mnist
def test_official_mnist_test_set():
    root = Path(MNIST_DIR)
    images = next(root.glob("t10k-images*"))
    labels = next(root.glob("t10k-labels*"))
    dataset = load_mnist_idx(images, labels)
    assert len(dataset) == 10_000
    assert dataset.image_shape == (28, 28, 1)
    assert dataset.num_classes == 10


def test_test_files_without_top_class_take_train_names(tmp_path):
    (tmp_path / "train").mkdir()
    (tmp_path / "test").mkdir()
    train_paths = write_raw_idx(tmp_path / "train", bytes(4 * 6), (6, 2, 2), bytes([0, 1, 2, 0, 1, 2]))
    test_paths = write_raw_idx(tmp_path / "test", bytes(4 * 2), (2, 2, 2), bytes([0, 1]))
    assert load_mnist_idx(*test_paths).class_names == ["0", "1"]

    config = DataConfig(train_paths=list(train_paths), test_paths=list(test_paths))
    train, test = load_datasets(config, seed=0)
    assert train.class_names == test.class_names == ["0", "1", "2"]
    assert test.labels.tolist() == [0, 1]


def test_sidecar_still_wins_over_train_names(tmp_path):
    dataset = toy_images(2)
    train_paths = write_idx(dataset, tmp_path / "a-images", tmp_path / "a-labels")
    renamed = LabeledDataset(dataset.images, dataset.labels, ["up", "down"])
    test_paths = write_idx(renamed, tmp_path / "b-images", tmp_path / "b-labels")
    with pytest.raises(ClassMismatchError):
        load_datasets(DataConfig(train_paths=list(train_paths), test_paths=list(test_paths)), seed=0)
