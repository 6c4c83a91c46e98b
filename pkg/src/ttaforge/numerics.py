"""Dense numeric kernel: temperature softmax, entropy, moments and seeded RNG.

All routines work on float64 ``numpy`` arrays and are pure.
"""

import math
from typing import Literal

import numpy as np
from scipy.special import entr, softmax

from .exceptions import InvalidArgumentError

# Row sums of a probability matrix must be within this of 1.
STOCHASTIC_TOLERANCE = 1e-6

# Named RNG streams. The integer is the spawn key of the stream.
RNG_STREAMS: dict[str, int] = {
    "dataset": 0,
    "corruption": 1,
    "stream": 2,
    "init": 3,
    "pretrain": 4,
    "samples": 5,
}


def as_batch(x: np.ndarray | list, name: str = "batch") -> np.ndarray:
    """Validate and return a (B, D) float64 matrix with finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-dimensional, got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be non-empty, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def softmax_with_temperature(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / tau``.

    Args:
        logits: (B, K) matrix of finite logits.
        tau: Positive temperature. Values above 1 flatten the distribution.

    Returns:
        Row-stochastic (B, K) matrix.

    Raises:
        InvalidArgumentError: If ``tau`` is not positive or logits are not finite.
    """
    if not tau > 0 or not math.isfinite(tau):
        raise InvalidArgumentError(f"temperature must be positive, got {tau}")
    return softmax(as_batch(logits, "logits") / tau, axis=1)


def shannon_entropy(probs: np.ndarray) -> np.ndarray:
    """Per-row Shannon entropy in nats, with ``0 * ln 0 = 0``.

    Raises:
        InvalidArgumentError: If a row is not stochastic within tolerance.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise InvalidArgumentError(f"probabilities must be (B, K), got {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    row_sums = p.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > STOCHASTIC_TOLERANCE):
        raise InvalidArgumentError("probability rows must sum to 1")
    h = entr(p).sum(axis=1)
    return np.clip(h, 0.0, math.log(p.shape[1]))


def batch_moments(
    x: np.ndarray,
    axis: Literal["features", "samples"] = "features",
    groups: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and biased variance of a batch.

    Args:
        x: (B, D) batch.
        axis: ``"features"`` reduces over samples (one value per feature);
            ``"samples"`` reduces over features (one value per sample).
        groups: With ``axis="samples"``, split the D features into this many
            contiguous groups and return (B, groups) statistics.

    Returns:
        ``(mean, variance)`` with variance divided by the count, not count - 1.

    Raises:
        InvalidArgumentError: On an empty selection or a non-dividing group count.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidArgumentError(
            f"moments need a non-empty (B, D) batch, got {arr.shape}"
        )
    if axis == "features":
        if groups is not None:
            raise InvalidArgumentError("groups only apply to per-sample moments")
        return arr.mean(axis=0), arr.var(axis=0)
    if axis != "samples":
        raise InvalidArgumentError(f"unknown moment axis {axis!r}")
    if groups is None:
        return arr.mean(axis=1), arr.var(axis=1)
    if groups < 1 or arr.shape[1] % groups != 0:
        raise InvalidArgumentError(
            f"{groups} groups do not divide {arr.shape[1]} features"
        )
    grouped = arr.reshape(arr.shape[0], groups, -1)
    return grouped.mean(axis=2), grouped.var(axis=2)


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Return the named, reproducible RNG stream for a run seed."""
    if stream not in RNG_STREAMS:
        raise InvalidArgumentError(f"unknown RNG stream {stream!r}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(RNG_STREAMS[stream],))
    return np.random.default_rng(sequence)
