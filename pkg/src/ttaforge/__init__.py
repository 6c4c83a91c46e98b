"""ttaforge - Streaming Fully Test-Time Adaptation.

Entropy-minimisation adaptation of normalization affines on label-shifted,
small-batch test streams, with class rebalancing, entropy-based sample
selection, temperature scaling and batch renormalization.
"""

from .adapt import (
    PRESETS,
    ClassFrequencyState,
    StepReport,
    adapt_step,
    buffered_single_weight,
    dot_weights,
    entropy_threshold,
    init_class_frequency,
    normalize_weights,
    resolve_adapt_config,
    select_samples,
    update_class_frequency,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import settings
from .csv_source import load_csv_dataset
from .evaluation import (
    OnlineAccuracy,
    TraceWriter,
    aggregate,
    replay_trace,
    verify_summary,
)
from .exceptions import (
    CheckpointDecodeError,
    CheckpointError,
    DatasetError,
    DatasetFetchError,
    DatasetFormatError,
    ExperimentError,
    InvalidArgumentError,
    InvalidStateError,
    MissingCheckpointError,
    PresetError,
    ReportError,
    TTAForgeError,
)
from .experiment import run_experiment, sweep
from .models import (
    INF_IMBALANCE,
    AdaptConfig,
    ArchitectureSpec,
    CorruptionSpec,
    ExperimentConfig,
    NormKind,
    StreamSpec,
)
from .network import (
    ModelState,
    accuracy,
    backward_entropy,
    build_model,
    convert_batchnorm_to_renorm,
    forward,
    pretrain,
    recompute_running_stats,
    sgd_step,
    weighted_entropy_loss,
)
from .normalization import NormalizationLayer, StatsMode, normalize
from .numerics import (
    batch_moments,
    derive_rng,
    shannon_entropy,
    softmax_with_temperature,
)
from .report import render_report
from .stream import (
    LabeledDataset,
    apply_corruption,
    build_qt,
    generate_stream,
    synth_dataset,
)

__all__ = [
    # Numerics
    "softmax_with_temperature",
    "shannon_entropy",
    "batch_moments",
    "derive_rng",
    # Model
    "NormalizationLayer",
    "StatsMode",
    "normalize",
    "ModelState",
    "build_model",
    "forward",
    "backward_entropy",
    "weighted_entropy_loss",
    "sgd_step",
    "pretrain",
    "accuracy",
    "recompute_running_stats",
    "convert_batchnorm_to_renorm",
    "save_checkpoint",
    "load_checkpoint",
    # Adaptation
    "PRESETS",
    "ClassFrequencyState",
    "StepReport",
    "adapt_step",
    "entropy_threshold",
    "select_samples",
    "init_class_frequency",
    "update_class_frequency",
    "dot_weights",
    "normalize_weights",
    "buffered_single_weight",
    "resolve_adapt_config",
    # Streams
    "LabeledDataset",
    "synth_dataset",
    "build_qt",
    "generate_stream",
    "apply_corruption",
    "load_csv_dataset",
    # Evaluation
    "OnlineAccuracy",
    "TraceWriter",
    "aggregate",
    "replay_trace",
    "verify_summary",
    # Experiments
    "run_experiment",
    "sweep",
    "render_report",
    # Models
    "INF_IMBALANCE",
    "AdaptConfig",
    "ArchitectureSpec",
    "CorruptionSpec",
    "ExperimentConfig",
    "NormKind",
    "StreamSpec",
    # Config
    "settings",
    # Exceptions
    "TTAForgeError",
    "InvalidArgumentError",
    "InvalidStateError",
    "CheckpointError",
    "CheckpointDecodeError",
    "MissingCheckpointError",
    "DatasetError",
    "DatasetFormatError",
    "DatasetFetchError",
    "ExperimentError",
    "PresetError",
    "ReportError",
]

__version__ = "0.1.0"
