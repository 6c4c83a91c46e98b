"""Tests for normalization layers and their backward pass."""

import numpy as np
import pytest

from ttaforge.exceptions import InvalidArgumentError
from ttaforge.models import NormKind
from ttaforge.normalization import (
    NormalizationLayer,
    StatsMode,
    normalize,
    normalize_backward,
    renorm_factors,
)
from ttaforge.numerics import batch_moments


def make_layer(kind: NormKind, features: int = 6, seed: int = 0, **kwargs):
    rng = np.random.default_rng(seed)
    layer = NormalizationLayer.create(
        kind, features, groups=3 if kind == NormKind.GN else 1, **kwargs
    )
    layer.gamma = rng.uniform(0.5, 1.5, features)
    layer.beta = rng.normal(size=features)
    if kind.uses_batch_stats:
        layer.running_mean = rng.normal(size=features)
        layer.running_var = rng.uniform(0.5, 2.0, features)
    return layer


def batch(b: int = 4, features: int = 6, seed: int = 1) -> np.ndarray:
    return np.random.default_rng(seed).normal(1.0, 2.0, size=(b, features))


class TestLayerValidation:
    def test_identity_init(self) -> None:
        layer = NormalizationLayer.create(NormKind.BN, 4)
        np.testing.assert_array_equal(layer.gamma, np.ones(4))
        np.testing.assert_array_equal(layer.beta, np.zeros(4))
        np.testing.assert_array_equal(layer.running_mean, np.zeros(4))
        np.testing.assert_array_equal(layer.running_var, np.ones(4))

    def test_per_sample_kinds_have_no_running_stats(self) -> None:
        assert NormalizationLayer.create(NormKind.LN, 4).running_mean is None

    def test_groups_must_divide(self) -> None:
        with pytest.raises(InvalidArgumentError):
            NormalizationLayer.create(NormKind.GN, 6, groups=4)

    def test_width_mismatch(self) -> None:
        layer = NormalizationLayer.create(NormKind.LN, 4)
        with pytest.raises(InvalidArgumentError):
            normalize(layer, np.zeros((2, 5)))


class TestForward:
    """Forward semantics of every normalization kind."""

    def test_batch_norm_standardizes(self) -> None:
        layer = NormalizationLayer.create(NormKind.BN, 6)
        y, _ = normalize(layer, batch(32), StatsMode.TRAIN)
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-5)

    def test_frozen_uses_running_stats(self) -> None:
        layer = make_layer(NormKind.BN)
        x = batch()
        y, _ = normalize(layer, x, StatsMode.FROZEN)
        expected = (x - layer.running_mean) / np.sqrt(
            layer.running_var + layer.eps
        ) * layer.gamma + layer.beta
        np.testing.assert_allclose(y, expected, atol=1e-12)

    def test_single_sample_batch_norm_returns_beta(self) -> None:
        layer = make_layer(NormKind.BN)
        y, _ = normalize(layer, batch(1), StatsMode.TRAIN)
        np.testing.assert_allclose(y[0], layer.beta, atol=1e-12)

    def test_layer_norm_rows(self) -> None:
        layer = NormalizationLayer.create(NormKind.LN, 6)
        y, _ = normalize(layer, batch())
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)

    def test_group_norm_groups(self) -> None:
        layer = NormalizationLayer.create(NormKind.GN, 6, groups=3)
        y, _ = normalize(layer, batch())
        np.testing.assert_allclose(y.reshape(4, 3, 2).mean(axis=2), 0.0, atol=1e-12)

    @pytest.mark.parametrize("kind", [NormKind.GN, NormKind.LN])
    def test_per_sample_kinds_are_batch_size_equivariant(self, kind: NormKind) -> None:
        layer = make_layer(kind)
        x = batch(8)
        full, _ = normalize(layer, x)
        singles = np.concatenate([normalize(layer, x[i : i + 1])[0] for i in range(8)])
        np.testing.assert_allclose(singles, full, atol=1e-12)

    def test_batch_norm_is_not_batch_size_equivariant(self) -> None:
        layer = make_layer(NormKind.BN)
        x = batch(8)
        full, _ = normalize(layer, x, StatsMode.TRAIN)
        halves = np.concatenate(
            [normalize(layer, x[:4])[0], normalize(layer, x[4:])[0]]
        )
        assert not np.allclose(halves, full)


class TestBatchRenorm:
    """Batch renormalization degeneracies and statistics handling."""

    def test_equals_batch_norm_when_running_stats_match_batch(self) -> None:
        x = batch(8)
        bn = make_layer(NormKind.BN)
        bren = bn.copy()
        bren.kind = NormKind.BREN
        bren.running_mean, bren.running_var = batch_moments(x, "features")
        expected, _ = normalize(bn, x, StatsMode.TRAIN)
        actual, _ = normalize(bren, x, StatsMode.TRAIN)
        np.testing.assert_allclose(actual, expected, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_equals_batch_norm_without_correction_range(self, seed: int) -> None:
        x = batch(8, seed=seed + 10)
        bren = make_layer(NormKind.BREN, seed=seed, r_max=1.0, d_max=0.0)
        bn = bren.copy()
        bn.kind = NormKind.BN
        expected, _ = normalize(bn, x, StatsMode.TRAIN)
        actual, _ = normalize(bren, x, StatsMode.TRAIN)
        np.testing.assert_allclose(actual, expected, atol=1e-12, rtol=0)

    def test_factors_are_clipped(self) -> None:
        layer = make_layer(NormKind.BREN)
        r, d = renorm_factors(layer, np.full(6, 100.0), np.full(6, 1e6))
        np.testing.assert_array_equal(r, np.full(6, layer.r_max))
        np.testing.assert_array_equal(d, np.full(6, layer.d_max))

    def test_running_stats_returned_not_written(self) -> None:
        layer = make_layer(NormKind.BREN)
        before = layer.running_mean.copy()
        x = batch(8)
        _, cache = normalize(layer, x, StatsMode.TRAIN)
        np.testing.assert_array_equal(layer.running_mean, before)
        mean, var = batch_moments(x, "features")
        m = layer.momentum
        np.testing.assert_allclose(cache.new_running_mean, (1 - m) * before + m * mean)
        np.testing.assert_allclose(
            cache.new_running_var, (1 - m) * layer.running_var + m * var
        )

    def test_single_sample_does_not_crash(self) -> None:
        layer = make_layer(NormKind.BREN)
        y, cache = normalize(layer, batch(1), StatsMode.TRAIN)
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(cache.r, 1.0 / layer.r_max)


def numeric_gradient(fn, value: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        original = value[idx]
        value[idx] = original + h
        plus = fn()
        value[idx] = original - h
        minus = fn()
        value[idx] = original
        grad[idx] = (plus - minus) / (2 * h)
    return grad


@pytest.mark.parametrize(
    "kind,mode",
    [
        (NormKind.BN, StatsMode.TRAIN),
        (NormKind.BN, StatsMode.FROZEN),
        (NormKind.BREN, StatsMode.TRAIN),
        (NormKind.GN, StatsMode.TRAIN),
        (NormKind.LN, StatsMode.TRAIN),
    ],
)
class TestBackward:
    """normalize_backward against central finite differences."""

    def test_gradients(self, kind: NormKind, mode: StatsMode) -> None:
        layer = make_layer(kind)
        x = batch()
        upstream = np.random.default_rng(7).normal(size=x.shape)
        _, cache = normalize(layer, x, mode)
        fixed = (cache.r, cache.d) if cache.r is not None else None

        def loss() -> float:
            y, _ = normalize(layer, x, mode, renorm=fixed)
            return float(np.sum(upstream * y))

        dx, dgamma, dbeta = normalize_backward(layer, cache, upstream)
        np.testing.assert_allclose(dx, numeric_gradient(loss, x), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(
            dgamma, numeric_gradient(loss, layer.gamma), rtol=1e-5, atol=1e-7
        )
        np.testing.assert_allclose(
            dbeta, numeric_gradient(loss, layer.beta), rtol=1e-5, atol=1e-7
        )
