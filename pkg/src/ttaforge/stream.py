"""Synthetic target data, corruptions and label-shifted test streams."""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.linalg import expm
from scipy.stats import ortho_group

from .exceptions import InvalidArgumentError
from .models import CorruptionKind, CorruptionSpec, StreamSpec
from .numerics import as_batch, derive_rng

logger = logging.getLogger(__name__)

NOISE_SIGMA = {1: 0.1, 2: 0.25, 3: 0.5, 4: 0.75, 5: 1.0}
SCALE_FACTOR = {1: 1.25, 2: 1.5, 3: 2.0, 4: 2.5, 5: 3.0}
ROTATION_ANGLE = {
    1: math.pi / 16,
    2: math.pi / 8,
    3: math.pi / 6,
    4: math.pi / 4,
    5: math.pi / 3,
}


@dataclass(eq=False)
class LabeledDataset:
    """Feature matrix with integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.features = as_batch(self.features, "features")
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise InvalidArgumentError("labels must be a vector with one entry per row")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise InvalidArgumentError("labels must be integers")
        if self.num_classes < 2:
            raise InvalidArgumentError("a dataset needs at least two classes")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        self.labels = self.labels.astype(np.int64)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(eq=False)
class StreamBatch:
    """A test batch in stream order. ``index`` counts batches from 1."""

    index: int
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def synth_dataset(
    num_classes: int,
    dim: int,
    n_per_class: int,
    cluster_spread: float,
    seed: int,
    *,
    radius: float = 3.0,
    sample_seed: int | None = None,
) -> LabeledDataset:
    """Gaussian clusters with means on a sphere of ``radius``.

    Cluster means depend on ``seed`` only; the samples are drawn from
    ``sample_seed`` (defaults to ``seed``), so source and target sets can
    share their means and differ in their draws. Rows are ordered by class.
    """
    if num_classes < 2 or dim < 2:
        raise InvalidArgumentError("synthetic data needs K >= 2 and D >= 2")
    if n_per_class < 1:
        raise InvalidArgumentError("n_per_class must be positive")
    means = derive_rng(seed, "dataset").normal(size=(num_classes, dim))
    means *= radius / np.linalg.norm(means, axis=1, keepdims=True)
    rng = derive_rng(seed if sample_seed is None else sample_seed, "samples")
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = rng.normal(0.0, cluster_spread, size=(labels.shape[0], dim))
    return LabeledDataset(means[labels] + noise, labels, num_classes)


def build_qt(t: int, num_classes: int, imbalance_ratio: float) -> np.ndarray:
    """Class distribution of step ``t`` (1-based): class ``t`` is the majority.

    The majority class has probability ``rho / (rho + K - 1)`` and every other
    class ``1 / (rho + K - 1)``, so their ratio is exactly ``rho``.

    Raises:
        InvalidArgumentError: If ``t`` is outside ``[1, K]`` or ``rho < 1``.
    """
    if num_classes < 2:
        raise InvalidArgumentError("need at least two classes")
    if not 1 <= t <= num_classes:
        raise InvalidArgumentError(f"step {t} outside [1, {num_classes}]")
    if not imbalance_ratio >= 1:
        raise InvalidArgumentError(f"imbalance ratio below 1: {imbalance_ratio}")
    denominator = imbalance_ratio + num_classes - 1
    q = np.full(num_classes, 1.0 / denominator)
    q[t - 1] = imbalance_ratio / denominator
    return q


class _ClassPools:
    """Per-class permutations consumed without replacement, then with."""

    def __init__(self, labels: np.ndarray, num_classes: int, rng: np.random.Generator):
        self._rng = rng
        self._pools = [
            rng.permutation(np.flatnonzero(labels == c)) for c in range(num_classes)
        ]
        self._cursor = [0] * num_classes
        self._warned: set[int] = set()

    def take(self, cls: int, count: int) -> np.ndarray:
        pool = self._pools[cls]
        start = self._cursor[cls]
        fresh = pool[start : start + count]
        self._cursor[cls] = start + fresh.shape[0]
        missing = count - fresh.shape[0]
        if missing == 0:
            return fresh
        if cls not in self._warned:
            self._warned.add(cls)
            logger.warning(
                f"Class {cls} pool of {pool.shape[0]} exhausted; "
                "sampling with replacement"
            )
        return np.concatenate([fresh, self._rng.choice(pool, size=missing)])


def generate_stream(data: LabeledDataset, spec: StreamSpec) -> List[StreamBatch]:
    """Order the dataset into a label-shifted stream and cut it into batches.

    Step ``s`` draws ``samples_per_step`` labels from the step distribution
    whose majority class is ``((s - 1) mod K) + 1`` and takes instances of
    those labels. The concatenated sequence is split into batches of
    ``batch_size`` in order; the last batch may be short.

    Raises:
        InvalidArgumentError: If the dataset lacks a class or the class count
            disagrees with ``spec``.
    """
    k = spec.num_classes
    if data.num_classes != k:
        raise InvalidArgumentError(
            f"stream expects {k} classes, dataset has {data.num_classes}"
        )
    counts = data.class_counts()
    if np.any(counts == 0):
        absent = np.flatnonzero(counts == 0).tolist()
        raise InvalidArgumentError(f"dataset has no samples of classes {absent}")

    rng = derive_rng(spec.seed, "stream")
    pools = _ClassPools(data.labels, k, rng)
    order = []
    for step in range(1, spec.total_steps + 1):
        q = build_qt((step - 1) % k + 1, k, spec.imbalance_ratio)
        step_labels = rng.choice(k, size=spec.samples_per_step, p=q)
        indices = np.empty(spec.samples_per_step, dtype=np.int64)
        for cls in np.unique(step_labels):
            slots = np.flatnonzero(step_labels == cls)
            indices[slots] = pools.take(int(cls), slots.shape[0])
        order.append(indices)
    order = np.concatenate(order)

    batches = []
    for number, start in enumerate(range(0, order.shape[0], spec.batch_size), 1):
        idx = order[start : start + spec.batch_size]
        batches.append(StreamBatch(number, data.features[idx], data.labels[idx]))
    logger.debug(
        f"Stream of {order.shape[0]} samples in {len(batches)} batches "
        f"(rho={spec.imbalance_ratio:g}, B={spec.batch_size})"
    )
    return batches


def rotation_matrix(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation by ``angle`` within a random 2-plane of ``R^dim``."""
    basis = ortho_group.rvs(dim, random_state=rng)
    generator = np.zeros((dim, dim))
    generator[0, 1], generator[1, 0] = -1.0, 1.0
    return expm(angle * basis @ generator @ basis.T)


def apply_corruption(
    data: LabeledDataset, spec: CorruptionSpec, seed: int
) -> LabeledDataset:
    """Apply a seeded covariate shift; labels are left untouched."""
    try:
        kind = CorruptionKind(spec.kind)
    except ValueError as exc:
        raise InvalidArgumentError(f"unknown corruption {spec.kind!r}") from exc
    if not 1 <= spec.severity <= 5:
        raise InvalidArgumentError(f"severity must be 1-5, got {spec.severity}")

    rng = derive_rng(seed, "corruption")
    x = data.features
    if kind == CorruptionKind.NONE:
        corrupted = x.copy()
    elif kind == CorruptionKind.GAUSSIAN_NOISE:
        corrupted = x + rng.normal(0.0, NOISE_SIGMA[spec.severity], size=x.shape)
    elif kind == CorruptionKind.FEATURE_SCALE:
        corrupted = x * SCALE_FACTOR[spec.severity]
    else:
        rotation = rotation_matrix(data.dim, ROTATION_ANGLE[spec.severity], rng)
        corrupted = x @ rotation.T
    return LabeledDataset(corrupted, data.labels.copy(), data.num_classes)
