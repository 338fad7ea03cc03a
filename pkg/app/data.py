"""Datasets: MNIST IDX files, class-per-directory image folders, splits."""

from __future__ import annotations

import gzip
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
import numpy.typing as npt
from PIL import Image, UnidentifiedImageError

from app.configs import settings
from app.errors import (
    BadMagicError,
    ClassMismatchError,
    CountMismatchError,
    DataError,
    EmptyDatasetError,
    ImageDecodeError,
    InvalidArgumentError,
    LabelRangeError,
    ShapeError,
    StratificationError,
    TruncatedPayloadError,
)
from app.kernels.tensor import Tensor
from app.schemas import DataConfig, IngestConfig

logger = logging.getLogger("data")

IDX_IMAGES_MAGIC = 0x00000803
# Same container with a trailing channel axis, used for colour ingests
IDX_IMAGES_RGB_MAGIC = 0x00000804
IDX_LABELS_MAGIC = 0x00000801

# Rec. 601 luminance
LUMA = np.array([0.299, 0.587, 0.114])

RESAMPLE = {
    "bilinear": Image.Resampling.BILINEAR,
    "nearest": Image.Resampling.NEAREST,
    "bicubic": Image.Resampling.BICUBIC,
    "box": Image.Resampling.BOX,
    "lanczos": Image.Resampling.LANCZOS,
}


@dataclass
class LabeledDataset:
    """N images in [0, 1] as [N,H,W,C] with integer labels and class names."""

    images: Tensor
    labels: npt.NDArray[np.int64]
    class_names: list[str]

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ShapeError(f"Images must be [N,H,W,C], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= len(self.class_names)
        ):
            raise LabelRangeError(
                f"Labels must lie in [0, {len(self.class_names)}), "
                f"got [{self.labels.min()}, {self.labels.max()}]"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("Pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        _, h, w, c = self.images.shape
        return h, w, c

    def take(self, indices: npt.ArrayLike) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            class_names=list(self.class_names),
        )


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except FileNotFoundError as e:
        raise DataError(f"Data file not found: {path}") from e
    except (OSError, EOFError) as e:
        raise DataError(f"Cannot read {path}: {e}") from e


def _parse_idx(blob: bytes, path: Path, magics: tuple[int, ...]) -> npt.NDArray[np.uint8]:
    if len(blob) < 4:
        raise TruncatedPayloadError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic not in magics:
        expected = " or ".join(f"0x{m:08X}" for m in magics)
        raise BadMagicError(f"{path}: bad magic 0x{magic:08X}, expected {expected}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise TruncatedPayloadError(f"{path}: IDX header is truncated")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    size = int(np.prod(dims, dtype=np.int64))
    if len(blob) - header_len < size:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(blob) - header_len} bytes, header announces {size}"
        )
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=header_len).reshape(dims)


def classes_sidecar(labels_path: Path) -> Path:
    return labels_path.with_name(labels_path.name + ".classes.json")


def load_mnist_idx(
    images_path: Path | str,
    labels_path: Path | str,
    class_names: list[str] | None = None,
    default_class_names: list[str] | None = None,
) -> LabeledDataset:
    """Parse a big-endian IDX image/label pair (optionally gzip-compressed).

    Class names come from `class_names`, then the labels sidecar, then
    `default_class_names`, and finally "0".."K-1" from the highest label.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    pixels = _parse_idx(
        _read_bytes(images_path), images_path, (IDX_IMAGES_MAGIC, IDX_IMAGES_RGB_MAGIC)
    )
    labels = _parse_idx(_read_bytes(labels_path), labels_path, (IDX_LABELS_MAGIC,))
    if len(pixels) != len(labels):
        raise CountMismatchError(
            f"{images_path} holds {len(pixels)} images but {labels_path} holds {len(labels)} labels"
        )
    if pixels.ndim == 3:
        pixels = pixels[..., None]

    sidecar = classes_sidecar(labels_path)
    if class_names is None and sidecar.exists():
        class_names = json.loads(sidecar.read_text(encoding="utf-8"))
    if class_names is None:
        class_names = default_class_names
    if class_names is None:
        top = int(labels.max()) + 1 if labels.size else 0
        class_names = [str(i) for i in range(top)]

    logger.info(f"Loaded {len(labels)} samples of shape {pixels.shape[1:]} from {images_path}")
    return LabeledDataset(
        images=pixels.astype(np.float32) / np.float32(255),
        labels=labels.astype(np.int64),
        class_names=list(class_names),
    )


def write_idx(
    dataset: LabeledDataset, images_path: Path | str, labels_path: Path | str
) -> tuple[Path, Path]:
    """Write the dataset as an IDX pair plus a class-name sidecar."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    if dataset.num_classes > 256:
        raise DataError("IDX labels are single bytes; more than 256 classes cannot be stored")
    n, h, w, c = dataset.images.shape
    pixels = np.clip(np.rint(dataset.images * 255), 0, 255).astype(np.uint8)
    if c == 1:
        image_header = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w)
        pixels = pixels[..., 0]
    else:
        image_header = struct.pack(">IIIII", IDX_IMAGES_RGB_MAGIC, n, h, w, c)

    images_path.parent.mkdir(parents=True, exist_ok=True)
    labels_path.parent.mkdir(parents=True, exist_ok=True)
    images_path.write_bytes(image_header + pixels.tobytes())
    labels_path.write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )
    classes_sidecar(labels_path).write_text(json.dumps(dataset.class_names), encoding="utf-8")
    return images_path, labels_path


def _load_image(path: Path, config: IngestConfig) -> Tensor:
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageDecodeError(f"Cannot decode image {path}: {e}") from e

    planes = [rgb @ LUMA] if config.grayscale else [rgb[..., i] for i in range(3)]
    size = (config.target_w, config.target_h)
    resized = [
        np.asarray(
            Image.fromarray(plane.astype(np.float32)).resize(size, RESAMPLE[config.resample]),
            dtype=np.float64,
        )
        for plane in planes
    ]
    out = np.stack(resized, axis=-1) / 255.0
    if config.quantize:
        out = np.rint(out * 255) / 255
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def ingest_image_dir(
    root: Path | str, config: IngestConfig = IngestConfig()
) -> LabeledDataset:
    """Load root/<class>/<image> files with grayscale conversion and resizing."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"Image directory not found: {root}")
    extensions = {f".{ext.lower().lstrip('.')}" for ext in config.extensions}

    class_names: list[str] = []
    paths: list[Path] = []
    labels: list[int] = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(
            p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in extensions
        )
        if not files:
            logger.warning(f"Skipping empty class directory {class_dir}")
            continue
        label = len(class_names)
        class_names.append(class_dir.name)
        paths.extend(files)
        labels.extend([label] * len(files))

    if not class_names:
        raise EmptyDatasetError(f"No class directories with images under {root}")

    # map() yields in submission order, so the result does not depend on scheduling
    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        images = list(pool.map(partial(_load_image, config=config), paths))

    logger.info(f"Ingested {len(paths)} images in {len(class_names)} classes from {root}")
    return LabeledDataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        class_names=class_names,
    )


def split(
    dataset: LabeledDataset, test_fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded stratified split into (train, test)."""
    if not 0 < test_fraction < 1:
        raise InvalidArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == label)
        if members.size == 0:
            continue
        if members.size < 2:
            raise StratificationError(
                f"Class '{dataset.class_names[label]}' has {members.size} sample(s); "
                "a stratified split needs at least 2"
            )
        members = rng.permutation(members)
        n_test = int(np.floor(members.size * test_fraction + 0.5))
        n_test = min(max(n_test, 1), members.size - 1)
        test_idx.extend(members[:n_test].tolist())
        train_idx.extend(members[n_test:].tolist())
    return dataset.take(sorted(train_idx)), dataset.take(sorted(test_idx))


def subset(dataset: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Stratified sample of about n items (exact up to one per class)."""
    if n >= len(dataset):
        return dataset
    _, sample = split(dataset, n / len(dataset), seed)
    return sample


def check_compatible(train: LabeledDataset, test: LabeledDataset) -> None:
    if train.class_names != test.class_names:
        raise ClassMismatchError(
            f"Train classes {train.class_names} differ from test classes {test.class_names}"
        )
    if train.image_shape != test.image_shape:
        raise ShapeError(
            f"Train images {train.image_shape} differ from test images {test.image_shape}"
        )


def load_source(
    config: DataConfig, paths: list[Path], default_class_names: list[str] | None = None
) -> LabeledDataset:
    if config.source == "mnist_idx":
        images_path, labels_path = paths
        return load_mnist_idx(images_path, labels_path, default_class_names=default_class_names)
    (root,) = paths
    return ingest_image_dir(root, config.ingest)


def load_datasets(config: DataConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and test sets for a run, split and subsampled as configured."""
    if not config.train_paths:
        raise DataError("data.train_paths is empty")
    train = load_source(config, config.train_paths)
    if config.test_paths:
        # Test files may lack the highest class; without a sidecar they take the train names
        test = load_source(config, config.test_paths, train.class_names)
        check_compatible(train, test)
    else:
        train, test = split(train, config.test_fraction, seed)
    if config.train_limit is not None:
        train = subset(train, config.train_limit, seed)
    if config.test_limit is not None:
        test = subset(test, config.test_limit, seed + 1)
    logger.info(f"Using {len(train)} training and {len(test)} test samples")
    return train, test


__all__ = [
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "LabeledDataset",
    "check_compatible",
    "classes_sidecar",
    "ingest_image_dir",
    "load_datasets",
    "load_mnist_idx",
    "load_source",
    "split",
    "subset",
    "write_idx",
]
