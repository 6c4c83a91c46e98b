"""Pydantic models for configurations, stream specifications and run records."""

import math
from enum import StrEnum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Imbalance factor standing for "infinite" imbalance.
INF_IMBALANCE = 500000.0


def parse_imbalance(value: object) -> float:
    """Map ``inf``/``INF``/``math.inf`` to the finite sentinel, pass numbers through."""
    if isinstance(value, str):
        if value.strip().lower() in {"inf", "infinity", "∞"}:
            return INF_IMBALANCE
        return float(value)
    if isinstance(value, (int, float)):
        if math.isinf(value) and value > 0:
            return INF_IMBALANCE
        return float(value)
    raise ValueError(f"cannot interpret imbalance factor {value!r}")


class NormKind(StrEnum):
    """Normalization layer kinds."""

    BN = "bn"
    BREN = "bren"
    GN = "gn"
    LN = "ln"

    @property
    def uses_batch_stats(self) -> bool:
        return self in (NormKind.BN, NormKind.BREN)


class CorruptionKind(StrEnum):
    """Synthetic covariate-shift corruptions."""

    NONE = "none"
    GAUSSIAN_NOISE = "gaussian_noise"
    FEATURE_SCALE = "feature_scale"
    FEATURE_ROTATE = "feature_rotate"


class ArchitectureSpec(BaseModel):
    """Feed-forward classifier layout: affine -> norm -> ReLU per hidden width."""

    input_dim: int = Field(ge=1)
    num_classes: int = Field(ge=2)
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    norm: NormKind = NormKind.BN
    groups: int = Field(default=8, ge=1)
    eps: float = Field(default=1e-5, gt=0)
    momentum: float = Field(default=0.01, gt=0, le=1)
    r_max: float = Field(default=3.0, ge=1)
    d_max: float = Field(default=5.0, ge=0)

    @model_validator(mode="after")
    def _groups_divide_widths(self) -> "ArchitectureSpec":
        if self.norm == NormKind.GN:
            for width in self.hidden:
                if width % self.groups != 0:
                    raise ValueError(
                        f"{self.groups} groups do not divide hidden width {width}"
                    )
        return self


class TrainingConfig(BaseModel):
    """Source pretraining hyperparameters (cross-entropy, plain SGD)."""

    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=0.1, gt=0)
    seed: int = Field(default=0, ge=0)


class AdaptConfig(BaseModel):
    """Online adaptation hyperparameters and trick toggles.

    ``entropy_factor`` left as ``None`` is resolved from the per-backbone
    default table at run time.
    """

    adapt: bool = True
    lr: float = Field(default=0.01, gt=0)
    entropy_factor: Optional[float] = Field(default=None, ge=0, le=1)
    temperature: float = Field(default=1.2, gt=0)
    class_rebalance: bool = False
    sample_selection: bool = False
    temperature_scaling: bool = False
    batch_renorm: bool = False
    buffer_size: int = Field(default=1, ge=1)
    z_momentum: float = Field(default=0.95, ge=0, le=1)
    weight_floor: float = Field(default=1e-8, gt=0)
    soft_frequency: bool = True

    @property
    def effective_temperature(self) -> float:
        return self.temperature if self.temperature_scaling else 1.0


class StreamSpec(BaseModel):
    """Label-shifted stream layout. ``steps`` defaults to the class count."""

    num_classes: int = Field(ge=2)
    imbalance_ratio: float = Field(default=1.0, ge=1)
    samples_per_step: int = Field(default=100, ge=1)
    batch_size: int = Field(default=16, ge=1)
    seed: int = Field(default=0, ge=0)
    steps: Optional[int] = Field(default=None, ge=1)

    @field_validator("imbalance_ratio", mode="before")
    @classmethod
    def _map_infinite(cls, value: object) -> float:
        return parse_imbalance(value)

    @property
    def total_steps(self) -> int:
        return self.steps if self.steps is not None else self.num_classes


class CorruptionSpec(BaseModel):
    """Corruption kind and severity (1-5)."""

    kind: CorruptionKind = CorruptionKind.GAUSSIAN_NOISE
    severity: int = Field(default=5, ge=1, le=5)


class SyntheticDataSpec(BaseModel):
    """Gaussian-cluster source/target task.

    Source and target share cluster means (``seed``); the target draws fresh
    samples and is then corrupted.
    """

    num_classes: int = Field(default=10, ge=2)
    dim: int = Field(default=16, ge=2)
    source_per_class: int = Field(default=300, ge=1)
    target_per_class: int = Field(default=300, ge=1)
    cluster_spread: float = Field(default=1.0, ge=0)
    radius: float = Field(default=3.0, gt=0)
    seed: int = Field(default=0, ge=0)


class SweepGrid(BaseModel):
    """Axes expanded by ``sweep``. ``None`` entries keep the configured value."""

    presets: List[str] = Field(default_factory=lambda: ["tent", "bot"])
    norms: List[NormKind] = Field(
        default_factory=lambda: [NormKind.BN, NormKind.GN, NormKind.LN]
    )
    batch_sizes: List[int] = Field(default_factory=lambda: [16, 8, 4, 2, 1])
    imbalances: List[float] = Field(
        default_factory=lambda: [1.0, 10.0, 100.0, 1000.0, INF_IMBALANCE]
    )
    entropy_factors: List[Optional[float]] = Field(default_factory=lambda: [None])
    temperatures: List[Optional[float]] = Field(default_factory=lambda: [None])
    buffers: List[Optional[int]] = Field(default_factory=lambda: [None])

    @field_validator("imbalances", mode="before")
    @classmethod
    def _map_infinite(cls, values: object) -> object:
        if isinstance(values, list):
            return [parse_imbalance(v) for v in values]
        return values


class ExperimentConfig(BaseModel):
    """Single JSON document describing an experiment or sweep.

    ``adapt`` fields that are explicitly set override the preset expansion.
    Unset ``seeds``, ``out_dir``, ``checkpoint_dir`` and ``workers`` fall back
    to the environment settings.
    """

    model_config = ConfigDict(extra="forbid")

    data: SyntheticDataSpec = Field(default_factory=SyntheticDataSpec)
    csv_path: Optional[str] = None
    corruption: CorruptionSpec = Field(default_factory=CorruptionSpec)
    norm: NormKind = NormKind.BN
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    groups: int = Field(default=8, ge=1)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    preset: str = "tent"
    adapt: AdaptConfig = Field(default_factory=AdaptConfig)
    batch_size: int = Field(default=16, ge=1)
    imbalance: float = Field(default=1.0, ge=1)
    samples_per_step: int = Field(default=100, ge=1)
    steps: Optional[int] = Field(default=None, ge=1)
    seeds: Optional[List[int]] = None
    out_dir: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    auto_pretrain: bool = False
    workers: Optional[int] = Field(default=None, ge=1)
    grid: SweepGrid = Field(default_factory=SweepGrid)

    @field_validator("imbalance", mode="before")
    @classmethod
    def _map_infinite(cls, value: object) -> float:
        return parse_imbalance(value)

    @field_validator("seeds")
    @classmethod
    def _non_negative_seeds(cls, seeds: Optional[List[int]]) -> Optional[List[int]]:
        if seeds is None:
            return None
        if not seeds:
            raise ValueError("at least one seed is required")
        if any(seed < 0 for seed in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds


class Cell(BaseModel):
    """One point of a sweep grid; ``None`` fields fall back to the config."""

    model_config = ConfigDict(frozen=True)

    preset: str
    norm: NormKind
    batch_size: int
    imbalance: float
    entropy_factor: Optional[float] = None
    temperature: Optional[float] = None
    buffer_size: Optional[int] = None

    @property
    def cell_id(self) -> str:
        imbalance = f"{self.imbalance:g}"
        if self.imbalance >= INF_IMBALANCE:
            imbalance = "inf"
        parts = [
            self.preset,
            self.norm.value,
            f"bs{self.batch_size}",
            f"rho{imbalance}",
        ]
        if self.entropy_factor is not None:
            parts.append(f"F{self.entropy_factor:g}")
        if self.temperature is not None:
            parts.append(f"tau{self.temperature:g}")
        if self.buffer_size is not None:
            parts.append(f"N{self.buffer_size}")
        return "_".join(parts)


class TraceRecord(BaseModel):
    """One JSONL line of an online-accuracy trace."""

    run: int
    step: int
    seen: int
    correct: int
    acc: float
    selected: int
    loss: float


class RunResult(BaseModel):
    """Outcome of a single adaptation run."""

    cell_id: str
    seed: int
    final_accuracy: float
    selected_fraction: float
    seen: int
    steps: int
    trace_path: Optional[str] = None


class RunAggregate(BaseModel):
    """Mean and sample standard deviation over runs."""

    finals: List[float]
    mean: float
    std: float
