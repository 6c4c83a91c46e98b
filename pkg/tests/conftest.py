import pytest

from ttaforge.models import (
    CorruptionSpec,
    ExperimentConfig,
    SyntheticDataSpec,
    TrainingConfig,
)


@pytest.fixture
def tiny_config(tmp_path):
    """Factory for a fast three-class experiment rooted in ``tmp_path``."""

    def make(**overrides) -> ExperimentConfig:
        values = {
            "data": SyntheticDataSpec(
                num_classes=3,
                dim=4,
                source_per_class=40,
                target_per_class=30,
                cluster_spread=0.5,
            ),
            "corruption": CorruptionSpec(severity=1),
            "hidden": [8],
            "groups": 2,
            "training": TrainingConfig(epochs=3, batch_size=16),
            "samples_per_step": 10,
            "batch_size": 4,
            "seeds": [1, 2, 3],
            "out_dir": str(tmp_path / "out"),
            "checkpoint_dir": str(tmp_path / "checkpoints"),
            "auto_pretrain": True,
            "workers": 2,
        }
        values.update(overrides)
        return ExperimentConfig(**values)

    return make
