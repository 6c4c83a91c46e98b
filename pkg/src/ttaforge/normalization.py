"""Normalization layers: batch norm, batch renorm, group norm and layer norm.

Each layer keeps its affine ``gamma``/``beta`` (the only parameters updated at
test time) and, for the batch-statistics kinds, frozen running statistics.
``normalize`` is pure: batch renorm returns its updated running statistics in
the cache and the caller decides whether to commit them.
"""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Optional

import numpy as np

from .exceptions import InvalidArgumentError, InvalidStateError
from .models import NormKind
from .numerics import as_batch, batch_moments


class StatsMode(StrEnum):
    """Which statistics the batch-statistics kinds normalize with."""

    TRAIN = "train-stats"
    FROZEN = "frozen-stats"


@dataclass(eq=False)
class NormalizationLayer:
    """Normalization layer over (B, F) activations."""

    kind: NormKind
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    eps: float = 1e-5
    momentum: float = 0.01
    r_max: float = 3.0
    d_max: float = 5.0
    groups: int = 1

    def __post_init__(self) -> None:
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        features = self.gamma.shape[0]
        if self.gamma.shape != (features,) or self.beta.shape != (features,):
            raise InvalidArgumentError("gamma and beta must be vectors of equal length")
        if self.kind.uses_batch_stats:
            if self.running_mean is None:
                self.running_mean = np.zeros(features)
            if self.running_var is None:
                self.running_var = np.ones(features)
            self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
            self.running_var = np.asarray(self.running_var, dtype=np.float64)
            if self.running_mean.shape != (features,) or self.running_var.shape != (
                features,
            ):
                raise InvalidArgumentError("running statistics must match features")
            if np.any(self.running_var < 0):
                raise InvalidArgumentError("running variance must be non-negative")
        else:
            self.running_mean = None
            self.running_var = None
        if self.kind == NormKind.GN and (
            self.groups < 1 or features % self.groups != 0
        ):
            raise InvalidArgumentError(
                f"{self.groups} groups do not divide {features} features"
            )
        if self.eps <= 0:
            raise InvalidArgumentError("eps must be positive")
        if not 0 < self.momentum <= 1:
            raise InvalidArgumentError("momentum must lie in (0, 1]")
        if self.r_max < 1 or self.d_max < 0:
            raise InvalidArgumentError("r_max must be >= 1 and d_max >= 0")

    @classmethod
    def create(
        cls,
        kind: NormKind,
        features: int,
        *,
        eps: float = 1e-5,
        momentum: float = 0.01,
        r_max: float = 3.0,
        d_max: float = 5.0,
        groups: int = 1,
    ) -> "NormalizationLayer":
        """Identity-initialised layer (gamma=1, beta=0, running stats 0/1)."""
        return cls(
            kind=kind,
            gamma=np.ones(features),
            beta=np.zeros(features),
            eps=eps,
            momentum=momentum,
            r_max=r_max,
            d_max=d_max,
            groups=groups if kind == NormKind.GN else 1,
        )

    @property
    def num_features(self) -> int:
        return int(self.gamma.shape[0])

    def copy(self) -> "NormalizationLayer":
        running_mean = self.running_mean
        running_var = self.running_var
        return NormalizationLayer(
            kind=self.kind,
            gamma=self.gamma.copy(),
            beta=self.beta.copy(),
            running_mean=None if running_mean is None else running_mean.copy(),
            running_var=None if running_var is None else running_var.copy(),
            eps=self.eps,
            momentum=self.momentum,
            r_max=self.r_max,
            d_max=self.d_max,
            groups=self.groups,
        )


@dataclass
class NormCache:
    """Internals of one ``normalize`` call needed by ``normalize_backward``."""

    kind: NormKind
    reduction: str
    standardized: np.ndarray
    inv_std: np.ndarray
    xhat: np.ndarray
    batch_mean: Optional[np.ndarray] = None
    batch_var: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    new_running_mean: Optional[np.ndarray] = field(default=None, repr=False)
    new_running_var: Optional[np.ndarray] = field(default=None, repr=False)


def renorm_factors(
    layer: NormalizationLayer, batch_mean: np.ndarray, batch_var: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Clipped batch-renorm correction ``(r, d)`` against the running statistics."""
    if layer.running_mean is None or layer.running_var is None:
        raise InvalidStateError(f"{layer.kind.value} layer has no running statistics")
    running_std = np.sqrt(layer.running_var + layer.eps)
    r = np.clip(
        np.sqrt(batch_var + layer.eps) / running_std, 1.0 / layer.r_max, layer.r_max
    )
    d = np.clip(
        (batch_mean - layer.running_mean) / running_std, -layer.d_max, layer.d_max
    )
    return r, d


def normalize(
    layer: NormalizationLayer,
    x: np.ndarray,
    mode: StatsMode = StatsMode.TRAIN,
    renorm: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[np.ndarray, NormCache]:
    """Normalize a batch and apply the affine transform.

    Args:
        layer: The normalization layer.
        x: (B, F) activations.
        mode: ``TRAIN`` uses current-batch statistics for BN/BReN, ``FROZEN``
            the running statistics. GN and LN ignore the mode.
        renorm: Fixed ``(r, d)`` for batch renorm instead of computing them.

    Returns:
        The normalized batch and the cache for the backward pass. For batch
        renorm in ``TRAIN`` mode the cache carries the EMA-updated running
        statistics; they are not written to ``layer``.

    Raises:
        InvalidArgumentError: If the feature count does not match the layer.
    """
    x = as_batch(x, "normalization input")
    if x.shape[1] != layer.num_features:
        raise InvalidArgumentError(
            f"expected {layer.num_features} features, got {x.shape[1]}"
        )

    if layer.kind.uses_batch_stats:
        if layer.running_mean is None or layer.running_var is None:
            raise InvalidStateError("layer has no running statistics")
        if mode == StatsMode.FROZEN:
            inv_std = 1.0 / np.sqrt(layer.running_var + layer.eps)
            u = (x - layer.running_mean) * inv_std
            cache = NormCache(layer.kind, "frozen", u, inv_std, u)
        else:
            mean, var = batch_moments(x, "features")
            inv_std = 1.0 / np.sqrt(var + layer.eps)
            u = (x - mean) * inv_std
            cache = NormCache(
                layer.kind, "batch", u, inv_std, u, batch_mean=mean, batch_var=var
            )
            if layer.kind == NormKind.BREN:
                if renorm is None:
                    renorm = renorm_factors(layer, mean, var)
                r, d = renorm
                cache.r, cache.d = r, d
                cache.xhat = u * r + d
                m = layer.momentum
                cache.new_running_mean = (1.0 - m) * layer.running_mean + m * mean
                cache.new_running_var = (1.0 - m) * layer.running_var + m * var
    elif layer.kind == NormKind.LN:
        mean, var = batch_moments(x, "samples")
        inv_std = 1.0 / np.sqrt(var + layer.eps)[:, None]
        u = (x - mean[:, None]) * inv_std
        cache = NormCache(layer.kind, "sample", u, inv_std, u)
    else:
        b = x.shape[0]
        grouped = x.reshape(b, layer.groups, -1)
        mean, var = batch_moments(x, "samples", groups=layer.groups)
        inv_std = 1.0 / np.sqrt(var + layer.eps)[:, :, None]
        u = ((grouped - mean[:, :, None]) * inv_std).reshape(x.shape)
        cache = NormCache(layer.kind, "group", u, inv_std, u)

    return layer.gamma * cache.xhat + layer.beta, cache


def _standardize_backward(du: np.ndarray, u: np.ndarray, inv_std, axis: int):
    return (
        du
        - du.mean(axis=axis, keepdims=True)
        - u * (du * u).mean(axis=axis, keepdims=True)
    ) * inv_std


def normalize_backward(
    layer: NormalizationLayer, cache: NormCache, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate through ``normalize``.

    Batch-renorm ``r`` and ``d`` are constants here.

    Returns:
        ``(dx, dgamma, dbeta)``.
    """
    dgamma = (dy * cache.xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    du = dy * layer.gamma
    if cache.r is not None:
        du = du * cache.r

    u = cache.standardized
    if cache.reduction == "frozen":
        dx = du * cache.inv_std
    elif cache.reduction == "batch":
        dx = _standardize_backward(du, u, cache.inv_std, axis=0)
    elif cache.reduction == "sample":
        dx = _standardize_backward(du, u, cache.inv_std, axis=1)
    else:
        b = du.shape[0]
        grouped = _standardize_backward(
            du.reshape(b, layer.groups, -1),
            u.reshape(b, layer.groups, -1),
            cache.inv_std,
            axis=2,
        )
        dx = grouped.reshape(du.shape)
    return dx, dgamma, dbeta
