"""
Online accuracy, run aggregation and JSONL trace files.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .exceptions import InvalidArgumentError, ReportError
from .models import RunAggregate, TraceRecord

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
TRACE_DIR = "traces"
SUMMARY_COLUMNS = [
    "cell_id",
    "preset",
    "norm",
    "batch_size",
    "imbalance",
    "entropy_factor",
    "temperature",
    "buffer_size",
    "runs",
    "mean_accuracy",
    "std_accuracy",
    "selected_fraction",
]
# Summary values are recomputed from traces up to this tolerance.
VERIFY_TOLERANCE = 1e-12


@dataclass
class OnlineAccuracy:
    """Accumulated accuracy over every prediction made so far."""

    correct: int = 0
    total: int = 0
    trace: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def record(self, predictions: np.ndarray, labels: np.ndarray) -> "OnlineAccuracy":
        """Count one batch of predictions and append the running accuracy.

        Raises:
            InvalidArgumentError: If the two vectors differ in length.
        """
        predictions = np.asarray(predictions)
        labels = np.asarray(labels)
        if predictions.shape != labels.shape or predictions.ndim != 1:
            raise InvalidArgumentError(
                f"{predictions.shape} predictions for {labels.shape} labels"
            )
        self.correct += int(np.sum(predictions == labels))
        self.total += int(labels.shape[0])
        self.trace.append((len(self.trace) + 1, self.accuracy))
        return self


def aggregate(finals: Iterable[float]) -> RunAggregate:
    """Mean and sample standard deviation; a single run has deviation 0."""
    values = [float(v) for v in finals]
    if not values:
        raise InvalidArgumentError("cannot aggregate zero runs")
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return RunAggregate(finals=values, mean=float(np.mean(values)), std=std)


class TraceWriter:
    """Writes the per-step trace of one run as JSON Lines."""

    def __init__(self, trace_file: Union[str, Path]):
        self.trace_file = Path(trace_file)
        self._ensure_trace_dir()
        # A rerun replaces the previous trace.
        self.trace_file.write_text("", encoding="utf-8")

    def _ensure_trace_dir(self):
        """Ensure the directory for the trace file exists."""
        self.trace_file.parent.mkdir(parents=True, exist_ok=True)

    def append_many(self, records: List[TraceRecord]):
        """Append several records with a single write."""
        if not records:
            return
        lines = [record.model_dump_json() + "\n" for record in records]
        with open(self.trace_file, "a", encoding="utf-8") as f:
            f.writelines(lines)


def load_trace(trace_file: Union[str, Path]) -> List[TraceRecord]:
    """Read every record of a trace file.

    Raises:
        ReportError: If the file is missing or a line cannot be parsed.
    """
    path = Path(trace_file)
    if not path.is_file():
        raise ReportError(f"no trace at {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(TraceRecord.model_validate_json(line))
            except ValidationError as e:
                raise ReportError(f"{path} line {number}: {e}") from e
    return records


def replay_trace(trace_file: Union[str, Path]) -> Tuple[float, float, int]:
    """Recompute ``(final_accuracy, selected_fraction, seen)`` from a trace.

    Raises:
        ReportError: If the trace is empty or its counters are inconsistent.
    """
    records = load_trace(trace_file)
    if not records:
        raise ReportError(f"trace {trace_file} is empty")
    seen = correct = selected = 0
    for record in records:
        if record.seen < seen or record.correct < correct:
            raise ReportError(
                f"trace {trace_file} counters decrease at step {record.step}"
            )
        if record.correct > record.seen:
            raise ReportError(f"trace {trace_file} step {record.step}: correct > seen")
        seen, correct = record.seen, record.correct
        selected += record.selected
    return correct / seen, selected / seen, seen


def trace_path(out_dir: Union[str, Path], cell_id: str, seed: int) -> Path:
    return Path(out_dir) / TRACE_DIR / cell_id / f"seed{seed}.jsonl"


def write_summary(rows: List[dict], out_dir: Union[str, Path]) -> Path:
    """Write the sorted summary CSV atomically and return its path."""
    path = Path(out_dir) / SUMMARY_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    frame = frame.sort_values("cell_id", kind="stable").reset_index(drop=True)
    temp_file = path.with_name(path.name + ".tmp")
    try:
        frame.to_csv(temp_file, index=False, lineterminator="\n")
        os.replace(temp_file, path)
    finally:
        if temp_file.exists():
            temp_file.unlink()
    logger.info(f"Wrote summary of {len(frame)} cells to {path}")
    return path


def read_summary(out_dir: Union[str, Path]) -> pd.DataFrame:
    """Load ``summary.csv`` from a results directory.

    Raises:
        ReportError: If the directory holds no summary.
    """
    path = Path(out_dir) / SUMMARY_FILE
    if not path.is_file():
        raise ReportError(f"no {SUMMARY_FILE} in {out_dir}")
    frame = pd.read_csv(path)
    missing = set(SUMMARY_COLUMNS) - set(frame.columns)
    if missing:
        raise ReportError(f"{path} lacks columns {sorted(missing)}")
    if frame.empty:
        raise ReportError(f"{path} has no rows")
    return frame


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=VERIFY_TOLERANCE)


def verify_summary(out_dir: Union[str, Path]) -> List[str]:
    """Recompute every summary row from its trace files.

    Returns:
        One message per mismatching or unverifiable row; empty when the
        summary is fully reproduced by the traces.
    """
    frame = read_summary(out_dir)
    problems = []
    for row in frame.itertuples(index=False):
        traces = sorted((Path(out_dir) / TRACE_DIR / row.cell_id).glob("seed*.jsonl"))
        if len(traces) != row.runs:
            problems.append(f"{row.cell_id}: {len(traces)} traces for {row.runs} runs")
            continue
        try:
            replays = [replay_trace(path) for path in traces]
        except ReportError as e:
            problems.append(f"{row.cell_id}: {e}")
            continue
        result = aggregate(final for final, _, _ in replays)
        fraction = float(np.mean([frac for _, frac, _ in replays]))
        if not (
            _close(result.mean, row.mean_accuracy)
            and _close(result.std, row.std_accuracy)
            and _close(fraction, row.selected_fraction)
        ):
            problems.append(f"{row.cell_id}: summary differs from its traces")
    for problem in problems:
        logger.warning(problem)
    return problems
