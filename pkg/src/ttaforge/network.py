"""Feed-forward classifier with pluggable normalization and analytic backprop.

The model is a value: every public operation that changes parameters or
statistics returns a new ``ModelState`` and leaves its argument untouched.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from .exceptions import InvalidArgumentError, InvalidStateError
from .models import ArchitectureSpec, NormKind, TrainingConfig
from .normalization import (
    NormalizationLayer,
    NormCache,
    StatsMode,
    normalize,
    normalize_backward,
)
from .numerics import as_batch, derive_rng, shannon_entropy, softmax_with_temperature
from .stream import LabeledDataset

logger = logging.getLogger(__name__)

Gradients = Dict[str, np.ndarray]
RenormFactors = Mapping[int, Tuple[np.ndarray, np.ndarray]]


@dataclass(eq=False)
class Dense:
    """Affine transform ``x @ weight + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    def copy(self) -> "Dense":
        return Dense(self.weight.copy(), self.bias.copy())


@dataclass(eq=False)
class ReLU:
    def copy(self) -> "ReLU":
        return ReLU()


Layer = Union[Dense, NormalizationLayer, ReLU]


def _hyperparameters(layer: NormalizationLayer) -> Tuple[float, ...]:
    return (layer.eps, layer.momentum, layer.r_max, layer.d_max, layer.groups)


@dataclass(eq=False)
class ModelState:
    """Ordered layer stack plus the architecture it was built from.

    Only the ``gamma``/``beta`` of normalization layers are adaptable.
    """

    architecture: ArchitectureSpec
    layers: List[Layer]

    @property
    def num_classes(self) -> int:
        return self.architecture.num_classes

    @property
    def input_dim(self) -> int:
        return self.architecture.input_dim

    def clone(self) -> "ModelState":
        return ModelState(
            self.architecture.model_copy(deep=True),
            [layer.copy() for layer in self.layers],
        )

    def norm_layers(self) -> Iterator[Tuple[int, NormalizationLayer]]:
        for index, layer in enumerate(self.layers):
            if isinstance(layer, NormalizationLayer):
                yield index, layer

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Trainable parameters by name, e.g. ``"1.gamma"`` or ``"0.weight"``."""
        for index, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                yield f"{index}.weight", layer.weight
                yield f"{index}.bias", layer.bias
            elif isinstance(layer, NormalizationLayer):
                yield f"{index}.gamma", layer.gamma
                yield f"{index}.beta", layer.beta

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters and running statistics by name."""
        state = dict(self.named_parameters())
        for index, layer in self.norm_layers():
            if layer.running_mean is not None and layer.running_var is not None:
                state[f"{index}.running_mean"] = layer.running_mean
                state[f"{index}.running_var"] = layer.running_var
        return state

    @property
    def adaptable_mask(self) -> frozenset[str]:
        return frozenset(
            name
            for index, _ in self.norm_layers()
            for name in (f"{index}.gamma", f"{index}.beta")
        )

    def signature(self) -> Tuple[Tuple[str, ...], ...]:
        """Layer kinds and shapes; used to match caches against models."""
        parts = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                parts.append(("dense", *map(str, layer.weight.shape)))
            elif isinstance(layer, NormalizationLayer):
                parts.append((layer.kind.value, str(layer.num_features)))
            else:
                parts.append(("relu",))
        return tuple(parts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelState):
            return NotImplemented
        if self.architecture != other.architecture:
            return False
        if self.signature() != other.signature():
            return False
        for mine, theirs in zip(self.layers, other.layers, strict=True):
            if isinstance(mine, NormalizationLayer) and isinstance(
                theirs, NormalizationLayer
            ):
                if _hyperparameters(mine) != _hyperparameters(theirs):
                    return False
        mine_state, theirs_state = self.state_dict(), other.state_dict()
        if mine_state.keys() != theirs_state.keys():
            return False
        return all(np.array_equal(mine_state[k], theirs_state[k]) for k in mine_state)


@dataclass
class ForwardCache:
    """Activations of one forward call; consumed by at most one backward call."""

    signature: Tuple[Tuple[str, ...], ...]
    mode: StatsMode
    inputs: List[np.ndarray]
    norm_caches: Dict[int, NormCache]
    logits: np.ndarray
    consumed: bool = field(default=False)

    def renorm_factors(self) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
        """The batch-renorm ``(r, d)`` used by this forward pass."""
        return {
            index: (cache.r, cache.d)
            for index, cache in self.norm_caches.items()
            if cache.r is not None and cache.d is not None
        }


def build_model(arch: ArchitectureSpec, rng: np.random.Generator) -> ModelState:
    """He-initialised ``affine -> norm -> ReLU`` stack with a linear head."""
    layers: List[Layer] = []
    fan_in = arch.input_dim
    for width in arch.hidden:
        weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        layers.append(Dense(weight, np.zeros(width)))
        layers.append(
            NormalizationLayer.create(
                arch.norm,
                width,
                eps=arch.eps,
                momentum=arch.momentum,
                r_max=arch.r_max,
                d_max=arch.d_max,
                groups=arch.groups,
            )
        )
        layers.append(ReLU())
        fan_in = width
    head = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, arch.num_classes))
    layers.append(Dense(head, np.zeros(arch.num_classes)))
    return ModelState(arch.model_copy(deep=True), layers)


def forward(
    model: ModelState,
    x: np.ndarray,
    mode: StatsMode = StatsMode.TRAIN,
    frozen_renorm: Optional[RenormFactors] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """Run the model on a batch.

    Args:
        model: Model to evaluate; it is not modified.
        x: (B, D) input batch.
        mode: Statistics mode for batch-statistics layers.
        frozen_renorm: Per-layer fixed batch-renorm ``(r, d)``; layers not
            listed compute theirs from the batch.

    Returns:
        ``(logits, cache)``.

    Raises:
        InvalidArgumentError: If the input width does not match the model.
    """
    h = as_batch(x, "input batch")
    if h.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"model expects {model.input_dim} features, got {h.shape[1]}"
        )
    inputs: List[np.ndarray] = []
    norm_caches: Dict[int, NormCache] = {}
    for index, layer in enumerate(model.layers):
        inputs.append(h)
        if isinstance(layer, Dense):
            h = h @ layer.weight + layer.bias
        elif isinstance(layer, NormalizationLayer):
            renorm = frozen_renorm.get(index) if frozen_renorm else None
            h, norm_caches[index] = normalize(layer, h, mode, renorm=renorm)
        else:
            h = np.maximum(h, 0.0)
    cache = ForwardCache(model.signature(), mode, inputs, norm_caches, h)
    return h, cache


def backward(
    model: ModelState,
    cache: ForwardCache,
    dlogits: np.ndarray,
    names: Optional[frozenset[str]] = None,
) -> Gradients:
    """Backpropagate ``dlogits`` and return gradients for ``names`` (default all).

    Raises:
        InvalidStateError: If the cache belongs to another architecture or was
            already consumed.
    """
    if cache.signature != model.signature():
        raise InvalidStateError("forward cache does not match the model")
    if cache.consumed:
        raise InvalidStateError("forward cache was already consumed")
    cache.consumed = True

    grads: Gradients = {}
    g = dlogits
    for index in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[index]
        inp = cache.inputs[index]
        if isinstance(layer, Dense):
            grads[f"{index}.weight"] = inp.T @ g
            grads[f"{index}.bias"] = g.sum(axis=0)
            g = g @ layer.weight.T
        elif isinstance(layer, NormalizationLayer):
            g, dgamma, dbeta = normalize_backward(layer, cache.norm_caches[index], g)
            grads[f"{index}.gamma"] = dgamma
            grads[f"{index}.beta"] = dbeta
        else:
            g = g * (inp > 0.0)
    if names is None:
        return grads
    return {name: grads[name] for name in sorted(names)}


def weighted_entropy_loss(
    probs: np.ndarray, weights: np.ndarray, mask: np.ndarray
) -> float:
    """``(1/|S|) * sum_{i in S} w_i H(p_i)``; zero when nothing is selected."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0
    entropies = shannon_entropy(probs)
    return float(np.sum(np.asarray(weights)[mask] * entropies[mask]) / count)


def _entropy_logit_gradient(probs: np.ndarray, tau: float) -> np.ndarray:
    """Per-row gradient of H(softmax(z / tau)) with respect to z."""
    safe = np.where(probs > 0.0, probs, 1.0)
    log_p = np.log(safe)
    entropy = -(probs * log_p).sum(axis=1, keepdims=True)
    return -probs * (log_p + entropy) / tau


def backward_entropy(
    model: ModelState,
    cache: ForwardCache,
    probs: np.ndarray,
    tau: float,
    sample_weights: np.ndarray,
    selection_mask: np.ndarray,
) -> Gradients:
    """Gradients of the weighted, selected entropy loss over adaptable parameters.

    The loss is ``(1/|S|) * sum_{i in S} w_i H(p_i)`` with ``p`` the
    temperature softmax of the cached logits. Unselected samples contribute
    nothing; an empty selection yields all-zero gradients.

    Raises:
        InvalidArgumentError: On shape mismatches or negative weights.
        InvalidStateError: If the cache does not belong to ``model``.
    """
    if cache.signature != model.signature():
        raise InvalidStateError("forward cache does not match the model")
    batch = cache.logits.shape[0]
    probs = np.asarray(probs, dtype=np.float64)
    weights = np.asarray(sample_weights, dtype=np.float64)
    mask = np.asarray(selection_mask, dtype=bool)
    if probs.shape != cache.logits.shape:
        raise InvalidArgumentError("probabilities do not match the cached logits")
    if weights.shape != (batch,) or mask.shape != (batch,):
        raise InvalidArgumentError("weights and mask must have one entry per sample")
    if np.any(weights < 0):
        raise InvalidArgumentError("sample weights must be non-negative")

    count = int(mask.sum())
    if count == 0:
        cache.consumed = True
        return {
            name: np.zeros_like(param)
            for name, param in model.named_parameters()
            if name in model.adaptable_mask
        }

    coeff = np.where(mask, weights, 0.0) / count
    dlogits = coeff[:, None] * _entropy_logit_gradient(probs, tau)
    return backward(model, cache, dlogits, names=model.adaptable_mask)


def _descend(model: ModelState, grads: Gradients, lr: float) -> None:
    params = dict(model.named_parameters())
    for name, grad in grads.items():
        param = params[name]
        param -= lr * grad


def sgd_step(model: ModelState, grads: Gradients, lr: float) -> ModelState:
    """Plain SGD on the adaptable parameters; everything else is copied as-is.

    Raises:
        InvalidArgumentError: On a negative learning rate or a gradient for a
            parameter outside the adaptable mask.
    """
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be non-negative, got {lr}")
    foreign = set(grads) - model.adaptable_mask
    if foreign:
        raise InvalidArgumentError(f"gradients for frozen parameters {sorted(foreign)}")
    updated = model.clone()
    _descend(updated, grads, lr)
    return updated


def _commit(model: ModelState, cache: ForwardCache) -> None:
    for index, norm_cache in cache.norm_caches.items():
        layer = model.layers[index]
        if (
            isinstance(layer, NormalizationLayer)
            and norm_cache.new_running_mean is not None
            and norm_cache.new_running_var is not None
        ):
            layer.running_mean = norm_cache.new_running_mean.copy()
            layer.running_var = norm_cache.new_running_var.copy()


def commit_running_stats(model: ModelState, cache: ForwardCache) -> ModelState:
    """Return a model with the batch-renorm running statistics of ``cache``."""
    if cache.signature != model.signature():
        raise InvalidStateError("forward cache does not match the model")
    updated = model.clone()
    _commit(updated, cache)
    return updated


def recompute_running_stats(model: ModelState, x: np.ndarray) -> ModelState:
    """Set BN/BReN running statistics to the exact statistics over ``x``.

    Batch-renorm layers are evaluated as plain batch norm (r=1, d=0) so the
    estimate does not depend on the previous running statistics.
    """
    identity = {
        index: (np.ones(layer.num_features), np.zeros(layer.num_features))
        for index, layer in model.norm_layers()
        if layer.kind == NormKind.BREN
    }
    _, cache = forward(model, x, StatsMode.TRAIN, frozen_renorm=identity)
    updated = model.clone()
    for index, layer in updated.norm_layers():
        norm_cache = cache.norm_caches[index]
        if layer.kind.uses_batch_stats and norm_cache.batch_mean is not None:
            layer.running_mean = norm_cache.batch_mean.copy()
            layer.running_var = norm_cache.batch_var.copy()
    return updated


def convert_batchnorm_to_renorm(model: ModelState) -> ModelState:
    """Swap every BN layer for batch renorm, keeping affine and running stats."""
    updated = model.clone()
    for _, layer in updated.norm_layers():
        if layer.kind == NormKind.BN:
            layer.kind = NormKind.BREN
    return updated


def predict(
    model: ModelState, x: np.ndarray, mode: StatsMode = StatsMode.FROZEN
) -> np.ndarray:
    logits, _ = forward(model, x, mode)
    return np.argmax(logits, axis=1)


def accuracy(
    model: ModelState, data: LabeledDataset, mode: StatsMode = StatsMode.FROZEN
) -> float:
    """Classification accuracy of the (non-adapting) model on a dataset."""
    return float(np.mean(predict(model, data.features, mode) == data.labels))


def pretrain(
    source: LabeledDataset, arch: ArchitectureSpec, training: TrainingConfig
) -> ModelState:
    """Train the classifier on labeled source data with cross-entropy.

    Every parameter is trained with plain minibatch SGD, normalization layers
    in ``TRAIN`` mode. Running statistics are then recomputed over the whole
    source set and frozen.

    Raises:
        InvalidArgumentError: If the source set has fewer than two classes or
            does not match the architecture.
    """
    if len(np.unique(source.labels)) < 2:
        raise InvalidArgumentError("pretraining needs at least two classes")
    if source.features.shape[1] != arch.input_dim:
        raise InvalidArgumentError("source features do not match the architecture")
    if source.num_classes != arch.num_classes:
        raise InvalidArgumentError("source classes do not match the architecture")

    model = build_model(arch, derive_rng(training.seed, "init"))
    rng = derive_rng(training.seed, "pretrain")
    n = source.features.shape[0]
    onehot = np.eye(arch.num_classes)[source.labels]

    for epoch in range(training.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, training.batch_size):
            idx = order[start : start + training.batch_size]
            logits, cache = forward(model, source.features[idx], StatsMode.TRAIN)
            probs = softmax_with_temperature(logits, 1.0)
            total_loss -= float(np.sum(onehot[idx] * log_softmax(logits, axis=1)))
            grads = backward(model, cache, (probs - onehot[idx]) / len(idx))
            _descend(model, grads, training.lr)
            _commit(model, cache)
        logger.debug(f"Epoch {epoch + 1}/{training.epochs}: loss {total_loss / n:.4f}")

    model = recompute_running_stats(model, source.features)
    logger.info(
        f"Pretrained {arch.norm.value} model for {training.epochs} epochs: "
        f"source accuracy {accuracy(model, source):.4f}"
    )
    return model
