"""Online test-time adaptation: entropy minimisation with rebalancing,
sample selection and temperature scaling.

One call of ``adapt_step`` processes one test batch: predict, select, weight,
backpropagate the weighted entropy and update the normalization affines.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .exceptions import InvalidArgumentError, InvalidStateError, PresetError
from .models import AdaptConfig, NormKind
from .network import (
    ModelState,
    backward_entropy,
    commit_running_stats,
    convert_batchnorm_to_renorm,
    forward,
    sgd_step,
    weighted_entropy_loss,
)
from .normalization import StatsMode
from .numerics import shannon_entropy, softmax_with_temperature

logger = logging.getLogger(__name__)

_TRICKS = ("class_rebalance", "sample_selection", "temperature_scaling")

# Trick flags per preset. Combined presets and ``RENORM_PRESETS`` also get
# batch renorm on batch-statistics backbones (see ``resolve_adapt_config``).
PRESETS: Dict[str, Dict[str, bool]] = {
    "source": {"adapt": False},
    "tent": {},
    "tent+br": {"batch_renorm": True},
    "dot": {"class_rebalance": True},
    "select": {"sample_selection": True},
    "temp": {"temperature_scaling": True},
    "dot+select": {"class_rebalance": True, "sample_selection": True},
    "dot+temp": {"class_rebalance": True, "temperature_scaling": True},
    "select+temp": {"sample_selection": True, "temperature_scaling": True},
    "delta": {"class_rebalance": True},
    "bot": {
        "class_rebalance": True,
        "sample_selection": True,
        "temperature_scaling": True,
    },
}

# Rebalancing over batch-renormalized statistics.
RENORM_PRESETS = frozenset({"delta"})

# Best entropy factor per backbone family and batch size.
DEFAULT_ENTROPY_FACTORS: Dict[str, Dict[int, float]] = {
    "batch": {16: 0.4, 8: 0.3, 4: 0.6, 2: 0.7, 1: 1.0},
    "gn": {16: 0.2, 8: 0.2, 4: 0.2, 2: 0.2, 1: 0.3},
    "ln": {16: 0.3, 8: 0.3, 4: 0.3, 2: 0.3, 1: 0.4},
}
LARGE_BATCH_ENTROPY_FACTOR = 0.4


def default_entropy_factor(norm: NormKind, batch_size: int) -> float:
    """Look up the default entropy factor; unknown sizes use the next smaller key."""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch size must be positive, got {batch_size}")
    family = "batch" if norm.uses_batch_stats else norm.value
    table = DEFAULT_ENTROPY_FACTORS[family]
    if batch_size > max(table):
        return LARGE_BATCH_ENTROPY_FACTOR
    return table[max(key for key in table if key <= batch_size)]


def resolve_adapt_config(
    preset: str,
    norm: NormKind,
    batch_size: int,
    overrides: Optional[AdaptConfig] = None,
) -> AdaptConfig:
    """Expand a preset into a full ``AdaptConfig``.

    Fields explicitly set on ``overrides`` win over the preset. An unset
    entropy factor is taken from the default table.

    Raises:
        PresetError: If ``preset`` is unknown.
    """
    if preset not in PRESETS:
        raise PresetError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    flags = dict(PRESETS[preset])
    combined = sum(flags.get(trick, False) for trick in _TRICKS) >= 2
    if (combined or preset in RENORM_PRESETS) and norm.uses_batch_stats:
        flags["batch_renorm"] = True

    values = {} if overrides is None else overrides.model_dump()
    for name in AdaptConfig.model_fields:
        explicit = overrides is not None and name in overrides.model_fields_set
        if name in flags and not explicit:
            values[name] = flags[name]
    config = AdaptConfig(**values)
    if config.entropy_factor is None:
        config = config.model_copy(
            update={"entropy_factor": default_entropy_factor(norm, batch_size)}
        )
    return config


def prepare_model(model: ModelState, config: AdaptConfig) -> ModelState:
    """Convert BN layers to batch renorm when the config asks for it."""
    if config.adapt and config.batch_renorm:
        return convert_batchnorm_to_renorm(model)
    return model


def entropy_threshold(entropy_factor: float, num_classes: int) -> float:
    """Entropy margin ``F * ln K``."""
    if num_classes < 2:
        raise InvalidArgumentError(f"need at least two classes, got {num_classes}")
    if not 0 <= entropy_factor <= 1:
        raise InvalidArgumentError(f"entropy factor outside [0, 1]: {entropy_factor}")
    return entropy_factor * math.log(num_classes)


def select_samples(entropies: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(entropies) < threshold


@dataclass(eq=False)
class ClassFrequencyState:
    """Momentum estimate ``z`` of the recent class frequencies.

    ``buffer`` keeps the most recent raw single-sample weights (at most
    ``buffer_size - 1``) for the buffered weighting path.
    """

    z: np.ndarray
    momentum: float
    buffer: deque = field(default_factory=deque)

    @property
    def capacity(self) -> int:
        return self.buffer.maxlen or 0

    def copy(self) -> "ClassFrequencyState":
        return ClassFrequencyState(
            self.z.copy(), self.momentum, deque(self.buffer, maxlen=self.capacity)
        )


def init_class_frequency(
    num_classes: int, momentum: float = 0.95, buffer_size: int = 1
) -> ClassFrequencyState:
    """Uniform ``z`` with an empty weight buffer of ``buffer_size - 1`` slots."""
    if num_classes < 2:
        raise InvalidArgumentError(f"need at least two classes, got {num_classes}")
    if not 0 <= momentum <= 1:
        raise InvalidArgumentError(f"momentum must lie in [0, 1], got {momentum}")
    if buffer_size < 1:
        raise InvalidArgumentError(f"buffer size must be >= 1, got {buffer_size}")
    return ClassFrequencyState(
        np.full(num_classes, 1.0 / num_classes),
        momentum,
        deque(maxlen=buffer_size - 1),
    )


def update_class_frequency(
    state: ClassFrequencyState, probs: np.ndarray, soft: bool = True
) -> ClassFrequencyState:
    """Blend the batch class distribution into ``z`` with momentum.

    With ``soft=False`` the batch distribution is built from one-hot pseudo
    labels instead of the probabilities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != state.z.shape[0]:
        raise InvalidArgumentError(
            f"expected (B, {state.z.shape[0]}) probabilities, got {probs.shape}"
        )
    if state.momentum == 1.0:
        return state.copy()
    if soft:
        batch_freq = probs.mean(axis=0)
    else:
        hard = np.zeros_like(probs)
        hard[np.arange(probs.shape[0]), probs.argmax(axis=1)] = 1.0
        batch_freq = hard.mean(axis=0)
    z = state.momentum * state.z + (1.0 - state.momentum) * batch_freq
    updated = state.copy()
    updated.z = z / z.sum()
    return updated


def dot_weights(probs: np.ndarray, z: np.ndarray, weight_floor: float) -> np.ndarray:
    """Raw weights ``1 / (z[pseudo_label] + weight_floor)``."""
    pseudo = np.asarray(probs).argmax(axis=1)
    return 1.0 / (np.asarray(z)[pseudo] + weight_floor)


def normalize_weights(raw: np.ndarray) -> np.ndarray:
    """Scale weights to mean one."""
    raw = np.asarray(raw, dtype=np.float64)
    return raw * raw.shape[0] / raw.sum()


def buffered_single_weight(
    raw: float, state: ClassFrequencyState
) -> Tuple[float, ClassFrequencyState]:
    """Normalise a single-sample weight against the recent raw weights.

    The sample is treated as one member of a virtual batch made of itself and
    the buffered weights; afterwards its raw weight enters the buffer.

    Raises:
        InvalidStateError: If the state has no buffer (``buffer_size == 1``).
    """
    if state.capacity == 0:
        raise InvalidStateError("weight buffer is disabled (buffer_size == 1)")
    count = len(state.buffer)
    weight = raw * (count + 1) / (raw + sum(state.buffer))
    updated = state.copy()
    updated.buffer.append(raw)
    return float(weight), updated


@dataclass(eq=False)
class StepReport:
    """What one adaptation step saw and did; every vector has batch length."""

    predictions: np.ndarray
    entropies: np.ndarray
    selected: np.ndarray
    weights: np.ndarray
    loss: float
    updated: bool

    @property
    def num_selected(self) -> int:
        return int(self.selected.sum())


def adapt_step(
    model: ModelState,
    batch: np.ndarray,
    config: AdaptConfig,
    state: ClassFrequencyState,
) -> Tuple[StepReport, ModelState, ClassFrequencyState]:
    """Predict on ``batch`` and adapt the model on it.

    Predictions come from the forward pass that precedes the update. The
    class-frequency estimate moves every step; an empty selection skips the
    parameter update but batch-renorm statistics are still committed.

    Args:
        model: Current model (not modified).
        batch: (B, D) test inputs.
        config: Resolved adaptation config (``entropy_factor`` set).
        state: Current class-frequency state (not modified).

    Returns:
        ``(report, next_model, next_state)``.
    """
    if not config.adapt:
        logits, _ = forward(model, batch, StatsMode.FROZEN)
        probs = softmax_with_temperature(logits, 1.0)
        size = logits.shape[0]
        report = StepReport(
            predictions=logits.argmax(axis=1),
            entropies=shannon_entropy(probs),
            selected=np.zeros(size, dtype=bool),
            weights=np.ones(size),
            loss=0.0,
            updated=False,
        )
        return report, model, state

    if config.entropy_factor is None:
        raise InvalidStateError("entropy factor is unresolved")

    logits, cache = forward(model, batch, StatsMode.TRAIN)
    tau = config.effective_temperature
    probs = softmax_with_temperature(logits, tau)
    predictions = logits.argmax(axis=1)
    entropies = shannon_entropy(probs)
    size = logits.shape[0]

    if config.sample_selection:
        threshold = entropy_threshold(config.entropy_factor, model.num_classes)
        selected = select_samples(entropies, threshold)
    else:
        selected = np.ones(size, dtype=bool)

    if config.class_rebalance:
        raw = dot_weights(probs, state.z, config.weight_floor)
        if size == 1 and state.capacity > 0:
            weight, state = buffered_single_weight(float(raw[0]), state)
            weights = np.array([weight])
        else:
            weights = normalize_weights(raw)
    else:
        weights = np.ones(size)

    state = update_class_frequency(state, probs, soft=config.soft_frequency)
    loss = weighted_entropy_loss(probs, weights, selected)

    updated = bool(selected.any())
    next_model = model
    if updated:
        grads = backward_entropy(model, cache, probs, tau, weights, selected)
        next_model = sgd_step(model, grads, config.lr)
    if any(c.new_running_mean is not None for c in cache.norm_caches.values()):
        next_model = commit_running_stats(next_model, cache)

    logger.debug(
        f"Adapted on {size} samples: {int(selected.sum())} selected, loss {loss:.4f}"
    )
    report = StepReport(predictions, entropies, selected, weights, loss, updated)
    return report, next_model, state
