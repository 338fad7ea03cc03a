from __future__ import annotations

import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.activations import ActivationKind, ActivationParams, output_channels
from app.errors import ShapeError

ALL_ACTIVATIONS = "all"


class ConvSpec(BaseModel):
    """Geometry of one convolution layer."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    in_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    kernel_h: int = Field(default=5, ge=1)
    kernel_w: int = Field(default=5, ge=1)
    padding: Literal["same", "valid"] = "same"
    stride: int = Field(default=1, ge=1)

    def padding_hw(self, h: int, w: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """(top, bottom), (left, right) zero padding for an h x w input."""
        if self.padding == "valid":
            return (0, 0), (0, 0)
        pads = []
        for size, k in ((h, self.kernel_h), (w, self.kernel_w)):
            out = -(-size // self.stride)
            total = max((out - 1) * self.stride + k - size, 0)
            pads.append((total // 2, total - total // 2))
        return pads[0], pads[1]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        (top, bottom), (left, right) = self.padding_hw(h, w)
        out_h = (h + top + bottom - self.kernel_h) // self.stride + 1
        out_w = (w + left + right - self.kernel_w) // self.stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeError(
                f"Convolution {self.kernel_h}x{self.kernel_w} ({self.padding}) "
                f"on {h}x{w} input leaves no output"
            )
        return out_h, out_w


class PoolSpec(BaseModel):
    """Geometry of a max-pool layer; non-covering remainders are dropped."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    pool_h: int = Field(default=2, ge=1)
    pool_w: int = Field(default=2, ge=1)
    stride: int = Field(default=2, ge=1)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        if self.pool_h > h or self.pool_w > w:
            raise ShapeError(
                f"Pool window {self.pool_h}x{self.pool_w} larger than {h}x{w} input"
            )
        return (h - self.pool_h) // self.stride + 1, (w - self.pool_w) // self.stride + 1


class ModelConfig(BaseModel):
    """Topology of the two-conv-layer CNN."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_h: int = Field(default=28, ge=1)
    input_w: int = Field(default=28, ge=1)
    input_c: int = Field(default=1, ge=1)
    conv1: ConvSpec = ConvSpec(in_channels=1, out_channels=32)
    conv2: ConvSpec = ConvSpec(in_channels=32, out_channels=64)
    pool: PoolSpec = PoolSpec()
    dense_width: int = Field(default=1024, ge=1)
    dropout_rate: float = Field(default=0.4, ge=0, lt=1)
    num_classes: int = Field(default=10, ge=2)
    activation: ActivationKind = ActivationKind.RELU
    # None applies `activation` to the dense hidden layer as well
    dense_activation: ActivationKind | None = None
    activation_params: ActivationParams = ActivationParams()
    dtype: Literal["float32", "float64"] = "float32"

    @model_validator(mode="after")
    def _check_topology(self) -> ModelConfig:
        if self.conv1.in_channels != self.input_c:
            raise ValueError(
                f"conv1.in_channels={self.conv1.in_channels} "
                f"must equal input_c={self.input_c}"
            )
        if self.conv2.in_channels != self.conv1.out_channels:
            raise ValueError(
                f"conv2.in_channels={self.conv2.in_channels} "
                f"must equal conv1.out_channels={self.conv1.out_channels}"
            )
        # Raises ShapeError (a ValueError) when a stage collapses
        self.feature_shapes()
        return self

    @property
    def hidden_activation(self) -> ActivationKind:
        return self.dense_activation or self.activation

    @property
    def conv1_channels(self) -> int:
        """Channels leaving conv1's activation (doubled under CReLU)."""
        return output_channels(self.activation, self.conv1.out_channels)

    @property
    def conv2_channels(self) -> int:
        return output_channels(self.activation, self.conv2.out_channels)

    @property
    def hidden_width(self) -> int:
        return output_channels(self.hidden_activation, self.dense_width)

    def conv2_spec(self) -> ConvSpec:
        """conv2 geometry with the input channels it really receives."""
        return self.conv2.model_copy(update={"in_channels": self.conv1_channels})

    def feature_shapes(self) -> dict[str, tuple[int, int, int]]:
        """Per-sample (H, W, C) after each stage."""
        h, w = self.conv1.output_hw(self.input_h, self.input_w)
        shapes = {"conv1": (h, w, self.conv1_channels)}
        h, w = self.pool.output_hw(h, w)
        shapes["pool1"] = (h, w, self.conv1_channels)
        h, w = self.conv2.output_hw(h, w)
        shapes["conv2"] = (h, w, self.conv2_channels)
        h, w = self.pool.output_hw(h, w)
        shapes["pool2"] = (h, w, self.conv2_channels)
        return shapes

    @property
    def flatten_dim(self) -> int:
        return math.prod(self.feature_shapes()["pool2"])


class TrainConfig(BaseModel):
    """Mini-batch SGD with momentum."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=5, ge=1)
    seed: int = 0
    shuffle: bool = True


class TrainHistory(BaseModel):
    """Per-epoch loss, timing and gradient norms of one training run."""

    epoch_losses: list[float] = Field(default_factory=list)
    epoch_seconds: list[float] = Field(default_factory=list)
    total_seconds: float = Field(default=0.0, ge=0)
    steps: int = Field(default=0, ge=0)
    # Mean L2 norm of each parameter's gradient per epoch
    grad_norms: dict[str, list[float]] = Field(default_factory=dict)


class IngestConfig(BaseModel):
    """Preprocessing of image-directory datasets."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    target_h: int = Field(default=28, ge=4)
    target_w: int = Field(default=28, ge=4)
    grayscale: bool = True
    normalize: Literal["divide255"] = "divide255"
    extensions: tuple[str, ...] = ("png", "jpg", "jpeg")
    resample: Literal["bilinear", "nearest", "bicubic", "box", "lanczos"] = "bilinear"
    # Round to the 8-bit grid MNIST pixels live on
    quantize: bool = True


class DataConfig(BaseModel):
    """Where training and test data come from."""

    model_config = ConfigDict(extra="forbid")

    source: Literal["mnist_idx", "image_dir"] = "mnist_idx"
    # mnist_idx: [images, labels]; image_dir: [root]
    train_paths: list[Path] = Field(default_factory=list)
    # Empty means a stratified split of the training data
    test_paths: list[Path] = Field(default_factory=list)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    ingest: IngestConfig = IngestConfig()
    train_limit: int | None = Field(default=None, ge=2)
    test_limit: int | None = Field(default=None, ge=2)

    @model_validator(mode="after")
    def _check_paths(self) -> DataConfig:
        expected = 2 if self.source == "mnist_idx" else 1
        for name in ("train_paths", "test_paths"):
            paths = getattr(self, name)
            if paths and len(paths) != expected:
                raise ValueError(
                    f"data.{name} for source '{self.source}' needs {expected} path(s), "
                    f"got {len(paths)}"
                )
        return self


class ReportConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output_path: Path = Path("reports")
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])
    baseline: ActivationKind = ActivationKind.RELU
    bootstrap_resamples: int = Field(default=1000, ge=1)
    ci_level: float = Field(default=0.95, gt=0, lt=1)


def _tiny_model() -> ModelConfig:
    return ModelConfig(
        input_h=6,
        input_w=6,
        input_c=1,
        conv1=ConvSpec(in_channels=1, out_channels=2, kernel_h=3, kernel_w=3),
        conv2=ConvSpec(in_channels=2, out_channels=2, kernel_h=3, kernel_w=3),
        dense_width=4,
        num_classes=3,
        dtype="float64",
    )


class GradcheckConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=_tiny_model)
    n_probes: int = Field(default=50, ge=1)
    eps: float = Field(default=1e-4, gt=0)
    scalar_eps: float = Field(default=1e-6, gt=0)
    scalar_probes: list[float] = Field(
        default_factory=lambda: [-3.0, -2.0, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 2.0, 3.0]
    )


class RunConfig(BaseModel):
    """A whole run: model, training, data, sweep and report settings."""

    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    activations: list[str] = Field(default_factory=lambda: ["relu"], min_length=1)
    report: ReportConfig = ReportConfig()
    gradcheck: GradcheckConfig = GradcheckConfig()
    seed: int = 0

    @field_validator("activations")
    @classmethod
    def _check_activations(cls, names: list[str]) -> list[str]:
        if names == [ALL_ACTIVATIONS]:
            return names
        return [ActivationKind.parse(name).value for name in names]

    @property
    def activation_kinds(self) -> list[ActivationKind]:
        if self.activations == [ALL_ACTIVATIONS]:
            return list(ActivationKind)
        return [ActivationKind(name) for name in self.activations]

    def model_for(self, kind: ActivationKind) -> ModelConfig:
        return self.model.model_copy(update={"activation": kind})

    def train_config(self) -> TrainConfig:
        """Training settings seeded by the run seed."""
        return self.train.model_copy(update={"seed": self.seed})


class MetricWithCI(BaseModel):
    """Point estimate and its confidence interval, all within [0, 1]."""

    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=0, le=1)
    ci_lo: float = Field(ge=0, le=1)
    ci_hi: float = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _ordered(self) -> MetricWithCI:
        if not self.ci_lo <= self.value <= self.ci_hi:
            raise ValueError(
                f"Interval ({self.ci_lo}, {self.ci_hi}) does not contain {self.value}"
            )
        return self


class EvalReport(BaseModel):
    """One row of the activation sweep."""

    activation: str
    accuracy: MetricWithCI
    precision_w: MetricWithCI
    recall_w: MetricWithCI
    f1_w: MetricWithCI
    train_seconds: float = Field(ge=0)
    eval_seconds: float = Field(ge=0)
    total_seconds: float = Field(ge=0)
    timing_comparable: bool = True

    @model_validator(mode="after")
    def _total_is_sum(self) -> EvalReport:
        if not math.isclose(
            self.total_seconds, self.train_seconds + self.eval_seconds, rel_tol=1e-9, abs_tol=1e-12
        ):
            raise ValueError("total_seconds must equal train_seconds + eval_seconds")
        return self


class RunFailure(BaseModel):
    """A sweep entry that raised instead of producing a report."""

    activation: str
    error: str


class RejectedProbe(BaseModel):
    z: float
    reason: str


class GradCheckReport(BaseModel):
    """Finite-difference agreement of analytic gradients."""

    label: str
    errors: dict[str, float] = Field(default_factory=dict)
    worst: str | None = None
    max_error: float = Field(default=0.0, ge=0)
    threshold: float
    passed: bool
    probes: int = 0
    rejected: list[RejectedProbe] = Field(default_factory=list)


class LayerCensus(BaseModel):
    name: str
    total: int = Field(ge=0)
    dead: int = Field(ge=0)
    dead_fraction: float = Field(ge=0, le=1)


class DeadUnitCensus(BaseModel):
    """Dead-unit counts per activation layer."""

    layers: list[LayerCensus] = Field(default_factory=list)

    def __getitem__(self, name: str) -> LayerCensus:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


class TensorEntry(BaseModel):
    name: str
    dims: list[int]
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)


class CheckpointHeader(BaseModel):
    """Self-describing part of a checkpoint file."""

    format_version: int
    model: ModelConfig
    seed: int
    tensors: list[TensorEntry]


__all__ = [
    "ALL_ACTIVATIONS",
    "CheckpointHeader",
    "ConvSpec",
    "DataConfig",
    "DeadUnitCensus",
    "EvalReport",
    "GradCheckReport",
    "GradcheckConfig",
    "IngestConfig",
    "LayerCensus",
    "MetricWithCI",
    "ModelConfig",
    "PoolSpec",
    "RejectedProbe",
    "ReportConfig",
    "RunConfig",
    "RunFailure",
    "TensorEntry",
    "TrainConfig",
    "TrainHistory",
]
