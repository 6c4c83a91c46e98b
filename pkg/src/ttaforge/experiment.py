"""
Experiment driver: pretraining, single adaptation runs and concurrent sweeps.
"""

import asyncio
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .adapt import (
    adapt_step,
    init_class_frequency,
    prepare_model,
    resolve_adapt_config,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import settings
from .csv_source import load_csv_dataset
from .evaluation import (
    OnlineAccuracy,
    TraceWriter,
    aggregate,
    trace_path,
    write_summary,
)
from .exceptions import ExperimentError, MissingCheckpointError
from .models import (
    AdaptConfig,
    ArchitectureSpec,
    Cell,
    ExperimentConfig,
    NormKind,
    RunResult,
    StreamSpec,
    TraceRecord,
)
from .network import ModelState, accuracy, pretrain
from .numerics import derive_rng
from .stream import LabeledDataset, apply_corruption, generate_stream, synth_dataset

logger = logging.getLogger(__name__)

# Runs per cell when neither the config nor the command line names seeds.
DEFAULT_RUNS = 3


def resolve_seeds(config: ExperimentConfig) -> List[int]:
    if config.seeds is not None:
        return list(config.seeds)
    return [settings.SEED + i for i in range(DEFAULT_RUNS)]


def resolve_out_dir(config: ExperimentConfig) -> Path:
    return Path(config.out_dir or settings.OUT_DIR)


def resolve_checkpoint_dir(config: ExperimentConfig) -> Path:
    return Path(config.checkpoint_dir or settings.CHECKPOINT_DIR)


def checkpoint_path(config: ExperimentConfig, norm: NormKind) -> Path:
    return resolve_checkpoint_dir(config) / f"{norm.value}.json"


@dataclass(eq=False)
class TaskData:
    """Labeled source set for pretraining and corrupted target set for adaptation."""

    source: LabeledDataset
    target: LabeledDataset


def _stratified_split(
    dataset: LabeledDataset, rng: np.random.Generator
) -> tuple[LabeledDataset, LabeledDataset]:
    source_idx, target_idx = [], []
    for cls in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == cls))
        half = (members.shape[0] + 1) // 2
        source_idx.append(members[:half])
        target_idx.append(members[half:])
    source = np.sort(np.concatenate(source_idx))
    target = np.sort(np.concatenate(target_idx))
    return (
        LabeledDataset(
            dataset.features[source], dataset.labels[source], dataset.num_classes
        ),
        LabeledDataset(
            dataset.features[target], dataset.labels[target], dataset.num_classes
        ),
    )


def load_task(config: ExperimentConfig) -> TaskData:
    """Build the source and corrupted target sets described by ``config``.

    A CSV dataset is split per class into a source half and a target half.
    """
    spec = config.data
    if config.csv_path:
        dataset = load_csv_dataset(config.csv_path)
        source, target = _stratified_split(dataset, derive_rng(spec.seed, "dataset"))
    else:
        source = synth_dataset(
            spec.num_classes,
            spec.dim,
            spec.source_per_class,
            spec.cluster_spread,
            spec.seed,
            radius=spec.radius,
            sample_seed=2 * spec.seed,
        )
        target = synth_dataset(
            spec.num_classes,
            spec.dim,
            spec.target_per_class,
            spec.cluster_spread,
            spec.seed,
            radius=spec.radius,
            sample_seed=2 * spec.seed + 1,
        )
    target = apply_corruption(target, config.corruption, spec.seed)
    return TaskData(source, target)


def architecture_for(
    config: ExperimentConfig, norm: NormKind, task: TaskData
) -> ArchitectureSpec:
    return ArchitectureSpec(
        input_dim=task.source.dim,
        num_classes=task.source.num_classes,
        hidden=config.hidden,
        norm=norm,
        groups=config.groups,
    )


def pretrain_checkpoint(
    config: ExperimentConfig, norm: NormKind, task: Optional[TaskData] = None
) -> Path:
    """Pretrain a ``norm`` backbone on the source set and save its checkpoint."""
    task = task or load_task(config)
    model = pretrain(task.source, architecture_for(config, norm, task), config.training)
    logger.info(
        f"Source model ({norm.value}) accuracy on corrupted target: "
        f"{accuracy(model, task.target):.4f}"
    )
    return save_checkpoint(
        model,
        checkpoint_path(config, norm),
        source_accuracy=accuracy(model, task.source),
    )


def obtain_model(
    config: ExperimentConfig, norm: NormKind, task: TaskData
) -> ModelState:
    """Load the ``norm`` checkpoint, pretraining it first if allowed.

    Raises:
        MissingCheckpointError: If no checkpoint exists and ``auto_pretrain``
            is off.
        ExperimentError: If the checkpoint was trained for another layout.
    """
    path = checkpoint_path(config, norm)
    try:
        model = load_checkpoint(path)
    except MissingCheckpointError:
        if not config.auto_pretrain:
            raise MissingCheckpointError(
                f"no checkpoint for '{norm.value}' at {path}; "
                f"run 'tta-forge pretrain --norm {norm.value}' first"
            ) from None
        logger.info(f"No checkpoint for '{norm.value}'; pretraining one now")
        model = load_checkpoint(pretrain_checkpoint(config, norm, task))
    if model.architecture != architecture_for(config, norm, task):
        raise ExperimentError(
            f"checkpoint {path} was trained for a different architecture"
        )
    return model


def cell_adapt_config(config: ExperimentConfig, cell: Cell) -> AdaptConfig:
    """Resolve the adaptation config of a cell.

    Cell axes override explicitly set ``adapt`` fields, which override the
    preset.
    """
    explicit = config.adapt.model_dump(include=config.adapt.model_fields_set)
    if cell.entropy_factor is not None:
        explicit["entropy_factor"] = cell.entropy_factor
    if cell.temperature is not None:
        explicit["temperature"] = cell.temperature
    if cell.buffer_size is not None:
        explicit["buffer_size"] = cell.buffer_size
    return resolve_adapt_config(
        cell.preset, cell.norm, cell.batch_size, AdaptConfig(**explicit)
    )


def run_cell(
    config: ExperimentConfig,
    cell: Cell,
    seed: int,
    model: ModelState,
    target: LabeledDataset,
    out_dir: Path,
) -> RunResult:
    """Adapt ``model`` online over one seeded stream and write its trace."""
    adapt_config = cell_adapt_config(config, cell)
    model = prepare_model(model, adapt_config)
    stream = generate_stream(
        target,
        StreamSpec(
            num_classes=target.num_classes,
            imbalance_ratio=cell.imbalance,
            samples_per_step=config.samples_per_step,
            batch_size=cell.batch_size,
            seed=seed,
            steps=config.steps,
        ),
    )
    state = init_class_frequency(
        target.num_classes, adapt_config.z_momentum, adapt_config.buffer_size
    )
    online = OnlineAccuracy()
    records: List[TraceRecord] = []
    selected = 0
    for batch in stream:
        report, model, state = adapt_step(model, batch.features, adapt_config, state)
        online.record(report.predictions, batch.labels)
        selected += report.num_selected
        records.append(
            TraceRecord(
                run=seed,
                step=batch.index,
                seen=online.total,
                correct=online.correct,
                acc=online.accuracy,
                selected=report.num_selected,
                loss=report.loss,
            )
        )

    path = trace_path(out_dir, cell.cell_id, seed)
    TraceWriter(path).append_many(records)
    result = RunResult(
        cell_id=cell.cell_id,
        seed=seed,
        final_accuracy=online.accuracy,
        selected_fraction=selected / online.total,
        seen=online.total,
        steps=len(stream),
        trace_path=str(path),
    )
    logger.info(
        f"{cell.cell_id} seed {seed}: accuracy {result.final_accuracy:.4f}, "
        f"selected {result.selected_fraction:.3f}"
    )
    return result


def summary_row(
    cell: Cell, adapt_config: AdaptConfig, results: Sequence[RunResult]
) -> dict:
    """One ``summary.csv`` row from the runs of a cell."""
    result = aggregate(r.final_accuracy for r in results)
    return {
        "cell_id": cell.cell_id,
        "preset": cell.preset,
        "norm": cell.norm.value,
        "batch_size": cell.batch_size,
        "imbalance": cell.imbalance,
        "entropy_factor": adapt_config.entropy_factor,
        "temperature": adapt_config.effective_temperature,
        "buffer_size": adapt_config.buffer_size,
        "runs": len(results),
        "mean_accuracy": result.mean,
        "std_accuracy": result.std,
        "selected_fraction": float(np.mean([r.selected_fraction for r in results])),
    }


def single_cell(config: ExperimentConfig) -> Cell:
    return Cell(
        preset=config.preset,
        norm=config.norm,
        batch_size=config.batch_size,
        imbalance=config.imbalance,
    )


def expand_grid(config: ExperimentConfig) -> List[Cell]:
    """Cartesian product of the sweep axes, without duplicate cells."""
    grid = config.grid
    cells: Dict[str, Cell] = {}
    for preset, norm, bs, rho, f, tau, n in itertools.product(
        grid.presets,
        grid.norms,
        grid.batch_sizes,
        grid.imbalances,
        grid.entropy_factors,
        grid.temperatures,
        grid.buffers,
    ):
        cell = Cell(
            preset=preset,
            norm=norm,
            batch_size=bs,
            imbalance=rho,
            entropy_factor=f,
            temperature=tau,
            buffer_size=n,
        )
        cells.setdefault(cell.cell_id, cell)
    return list(cells.values())


class SweepScheduler:
    """Runs (cell, seed) pairs concurrently, at most ``workers`` at a time.

    Every run adapts its own copy of the model in a worker thread; finished
    results are collected through a lock.
    """

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ExperimentError(f"workers must be positive, got {workers}")
        self.workers = workers
        self._semaphore = asyncio.Semaphore(workers)
        self._lock = asyncio.Lock()
        self._results: Dict[str, List[RunResult]] = {}

    async def _run_one(
        self,
        config: ExperimentConfig,
        cell: Cell,
        seed: int,
        model: ModelState,
        target: LabeledDataset,
        out_dir: Path,
    ) -> RunResult:
        async with self._semaphore:
            result = await asyncio.to_thread(
                run_cell, config, cell, seed, model, target, out_dir
            )
        async with self._lock:
            self._results.setdefault(cell.cell_id, []).append(result)
        return result

    async def run(
        self,
        config: ExperimentConfig,
        cells: Sequence[Cell],
        seeds: Sequence[int],
        models: Dict[NormKind, ModelState],
        target: LabeledDataset,
        out_dir: Path,
    ) -> Dict[str, List[RunResult]]:
        """Execute every run and return the results per cell in seed order.

        Raises:
            ExperimentError: If any run failed; the others still complete.
        """
        tasks = [
            self._run_one(config, cell, seed, models[cell.norm], target, out_dir)
            for cell in cells
            for seed in seeds
        ]
        logger.info(
            f"Running {len(tasks)} runs over {len(cells)} cells "
            f"with {self.workers} workers"
        )
        outcomes = await asyncio.gather(*tasks, return_exceptions=True)

        failures = [o for o in outcomes if isinstance(o, BaseException)]
        for failure in failures:
            logger.error(f"A sweep run failed: {failure}")
        if failures:
            raise ExperimentError(
                f"{len(failures)} of {len(tasks)} runs failed"
            ) from failures[0]

        order = {seed: i for i, seed in enumerate(seeds)}
        return {
            cell_id: sorted(results, key=lambda r: order[r.seed])
            for cell_id, results in self._results.items()
        }


def execute(config: ExperimentConfig, cells: Sequence[Cell]) -> Path:
    """Run every cell for every seed and write traces and ``summary.csv``."""
    seeds = resolve_seeds(config)
    out_dir = resolve_out_dir(config)
    adapt_configs = {cell.cell_id: cell_adapt_config(config, cell) for cell in cells}
    task = load_task(config)
    models = {
        norm: obtain_model(config, norm, task)
        for norm in sorted({cell.norm for cell in cells})
    }
    workers = config.workers or settings.WORKERS
    results = asyncio.run(
        SweepScheduler(workers).run(config, cells, seeds, models, task.target, out_dir)
    )
    rows = [
        summary_row(cell, adapt_configs[cell.cell_id], results[cell.cell_id])
        for cell in cells
    ]
    return write_summary(rows, out_dir)


def run_experiment(config: ExperimentConfig) -> Path:
    """Run the single cell named by the top-level fields of ``config``."""
    return execute(config, [single_cell(config)])


def sweep(config: ExperimentConfig) -> Path:
    """Run every cell of ``config.grid``."""
    cells = expand_grid(config)
    logger.info(f"Sweep over {len(cells)} cells")
    return execute(config, cells)
