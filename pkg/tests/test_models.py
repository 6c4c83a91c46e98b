"""Tests for Pydantic models."""

import math

import pytest
from pydantic import ValidationError

from ttaforge.models import (
    INF_IMBALANCE,
    AdaptConfig,
    ArchitectureSpec,
    Cell,
    CorruptionSpec,
    ExperimentConfig,
    NormKind,
    StreamSpec,
    SweepGrid,
    parse_imbalance,
)


class TestImbalance:
    """Tests for the infinite-imbalance sentinel."""

    @pytest.mark.parametrize("value", ["inf", "INF", "Infinity", "∞", math.inf])
    def test_infinite_maps_to_sentinel(self, value: object) -> None:
        assert parse_imbalance(value) == INF_IMBALANCE == 500000.0

    def test_numbers_pass_through(self) -> None:
        assert parse_imbalance("100") == 100.0
        assert parse_imbalance(10) == 10.0

    def test_garbage_rejected(self) -> None:
        with pytest.raises(ValueError):
            parse_imbalance("lots")

    def test_stream_spec_maps_inf(self) -> None:
        spec = StreamSpec(num_classes=10, imbalance_ratio="inf")
        assert spec.imbalance_ratio == INF_IMBALANCE
        assert spec.total_steps == 10

    def test_imbalance_below_one_rejected(self) -> None:
        with pytest.raises(ValidationError):
            StreamSpec(num_classes=10, imbalance_ratio=0.5)


class TestAdaptConfig:
    """Tests for adaptation hyperparameter validation."""

    def test_defaults(self) -> None:
        config = AdaptConfig()
        assert config.lr == 0.01
        assert config.temperature == 1.2
        assert config.buffer_size == 1
        assert config.z_momentum == 0.95
        assert config.entropy_factor is None
        assert config.effective_temperature == 1.0

    def test_effective_temperature_when_enabled(self) -> None:
        config = AdaptConfig(temperature_scaling=True, temperature=1.5)
        assert config.effective_temperature == 1.5

    @pytest.mark.parametrize(
        "field,value",
        [
            ("entropy_factor", 1.5),
            ("entropy_factor", -0.1),
            ("temperature", 0.0),
            ("buffer_size", 0),
            ("z_momentum", 1.1),
            ("weight_floor", 0.0),
        ],
    )
    def test_out_of_range_rejected(self, field: str, value: float) -> None:
        with pytest.raises(ValidationError):
            AdaptConfig(**{field: value})


class TestArchitectureSpec:
    def test_group_count_must_divide_widths(self) -> None:
        with pytest.raises(ValidationError):
            ArchitectureSpec(
                input_dim=4, num_classes=3, hidden=[6], norm="gn", groups=4
            )

    def test_groups_ignored_for_other_norms(self) -> None:
        spec = ArchitectureSpec(input_dim=4, num_classes=3, hidden=[6], groups=4)
        assert spec.norm == NormKind.BN

    def test_batch_stats_kinds(self) -> None:
        assert NormKind.BN.uses_batch_stats
        assert NormKind.BREN.uses_batch_stats
        assert not NormKind.GN.uses_batch_stats
        assert not NormKind.LN.uses_batch_stats


class TestExperimentConfig:
    """Tests for the experiment JSON document."""

    def test_unknown_keys_rejected(self) -> None:
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate({"bogus": 1})

    def test_empty_seed_list_rejected(self) -> None:
        with pytest.raises(ValidationError):
            ExperimentConfig(seeds=[])

    def test_negative_seed_rejected(self) -> None:
        with pytest.raises(ValidationError):
            ExperimentConfig(seeds=[1, -2])

    def test_json_round_trip(self) -> None:
        config = ExperimentConfig.model_validate_json(
            '{"imbalance": "inf", "seeds": [1, 2, 3], "norm": "gn",'
            ' "adapt": {"buffer_size": 2}}'
        )
        assert config.imbalance == INF_IMBALANCE
        assert config.seeds == [1, 2, 3]
        assert config.norm == NormKind.GN
        assert config.adapt.model_fields_set == {"buffer_size"}

    def test_severity_range(self) -> None:
        with pytest.raises(ValidationError):
            CorruptionSpec(severity=6)

    def test_grid_maps_inf(self) -> None:
        grid = SweepGrid(imbalances=[1, "inf"])
        assert grid.imbalances == [1.0, INF_IMBALANCE]


class TestCell:
    """Tests for sweep cell identifiers."""

    def test_minimal_id(self) -> None:
        cell = Cell(preset="tent", norm=NormKind.BN, batch_size=16, imbalance=1.0)
        assert cell.cell_id == "tent_bn_bs16_rho1"

    def test_full_id(self) -> None:
        cell = Cell(
            preset="bot",
            norm=NormKind.GN,
            batch_size=4,
            imbalance=1000.0,
            entropy_factor=0.2,
            temperature=1.2,
            buffer_size=2,
        )
        assert cell.cell_id == "bot_gn_bs4_rho1000_F0.2_tau1.2_N2"

    def test_infinite_imbalance_id(self) -> None:
        cell = Cell(
            preset="dot", norm=NormKind.LN, batch_size=1, imbalance=INF_IMBALANCE
        )
        assert cell.cell_id == "dot_ln_bs1_rhoinf"
