"""
Report tables from a results directory.
Renders method x batch size and method x imbalance grids per backbone.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd

from .adapt import PRESETS
from .evaluation import read_summary
from .models import INF_IMBALANCE

logger = logging.getLogger(__name__)

MISSING = "—"
AXES = {"batch_size": "batch size", "imbalance": "imbalance"}


@dataclass
class Report:
    """Pivoted accuracy tables keyed by ``"<axis>_<norm>"``."""

    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    missing: int = 0
    text: str = ""
    files: List[Path] = field(default_factory=list)


def _preset_order(presets: List[str]) -> List[str]:
    known = [p for p in PRESETS if p in presets]
    return known + sorted(p for p in presets if p not in PRESETS)


def _column_label(axis: str, value: float) -> str:
    if axis == "imbalance" and value >= INF_IMBALANCE:
        return "inf"
    return f"{value:g}"


def pivot(summary: pd.DataFrame, norm: str, axis: str) -> pd.DataFrame:
    """Mean accuracy of each preset along ``axis`` for one backbone.

    Cells that share a (preset, axis value) pair are averaged; absent pairs
    are NaN. Rows and columns cover every preset and axis value in the summary.
    """
    rows = _preset_order(sorted(summary["preset"].unique()))
    columns = sorted(summary[axis].unique())
    subset = summary[summary["norm"] == norm]
    table = subset.pivot_table(
        index="preset", columns=axis, values="mean_accuracy", aggfunc="mean"
    )
    table = table.reindex(index=rows, columns=columns)
    table.index.name = "preset"
    table.columns.name = axis
    return table


def render(table: pd.DataFrame, title: str, axis: str) -> str:
    shown = table.map(lambda v: MISSING if pd.isna(v) else f"{100 * v:.2f}")
    shown.columns = [_column_label(axis, c) for c in table.columns]
    shown.index.name = None
    return f"{title}\n{shown.to_string()}\n"


def build_report(results_dir: Union[str, Path]) -> Report:
    """Pivot the summary of ``results_dir``.

    Raises:
        ReportError: If the directory holds no usable summary.
    """
    summary = read_summary(results_dir)
    report = Report()
    sections = []
    for norm in sorted(summary["norm"].unique()):
        for axis, label in AXES.items():
            table = pivot(summary, norm, axis)
            report.tables[f"{axis}_{norm}"] = table
            report.missing += int(table.isna().sum().sum())
            sections.append(render(table, f"[{norm}] accuracy (%) by {label}", axis))
    report.text = "\n".join(sections)
    if report.missing:
        logger.warning(f"{report.missing} table cells have no results")
    return report


def write_report(report: Report, out_dir: Union[str, Path]) -> List[Path]:
    """Write each table as CSV plus the rendered text; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for name, table in report.tables.items():
        path = out_dir / f"report_{name}.csv"
        table.to_csv(path, lineterminator="\n")
        files.append(path)
    text_path = out_dir / "report.txt"
    text_path.write_text(report.text, encoding="utf-8")
    files.append(text_path)
    report.files = files
    logger.info(f"Wrote {len(files)} report files to {out_dir}")
    return files


def render_report(
    results_dir: Union[str, Path], out_dir: Union[str, Path, None] = None
) -> Report:
    """Build the report of ``results_dir`` and write it to ``out_dir``.

    ``out_dir`` defaults to the results directory itself.
    """
    built = build_report(results_dir)
    write_report(built, out_dir if out_dir is not None else results_dir)
    return built
