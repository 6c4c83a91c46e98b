"""Tests for report tables."""

import pandas as pd
import pytest

from ttaforge.evaluation import write_summary
from ttaforge.exceptions import ReportError
from ttaforge.models import INF_IMBALANCE, Cell, NormKind
from ttaforge.report import MISSING, build_report, render_report


def row(preset: str, norm: str, batch_size: int, imbalance: float, acc: float):
    cell = Cell(
        preset=preset, norm=NormKind(norm), batch_size=batch_size, imbalance=imbalance
    )
    return {
        "cell_id": cell.cell_id,
        "preset": preset,
        "norm": norm,
        "batch_size": batch_size,
        "imbalance": imbalance,
        "entropy_factor": 0.4,
        "temperature": 1.0,
        "buffer_size": 1,
        "runs": 3,
        "mean_accuracy": acc,
        "std_accuracy": 0.01,
        "selected_fraction": 1.0,
    }


class TestBuildReport:
    """Pivoting a results directory."""

    def test_single_cell(self, tmp_path) -> None:
        write_summary([row("tent", "bn", 16, 1.0, 0.5)], tmp_path)
        report = build_report(tmp_path)
        assert set(report.tables) == {"batch_size_bn", "imbalance_bn"}
        table = report.tables["batch_size_bn"]
        assert table.shape == (1, 1)
        assert table.loc["tent", 16] == 0.5
        assert report.missing == 0
        assert "50.00" in report.text

    def test_missing_cell_is_marked(self, tmp_path) -> None:
        rows = [
            row("tent", "bn", 16, 1.0, 0.5),
            row("tent", "bn", 4, 1.0, 0.4),
            row("bot", "bn", 16, 1.0, 0.6),
        ]
        write_summary(rows, tmp_path)
        report = build_report(tmp_path)
        table = report.tables["batch_size_bn"]
        assert list(table.index) == ["tent", "bot"]
        assert list(table.columns) == [4, 16]
        assert pd.isna(table.loc["bot", 4])
        assert report.missing == 1
        assert MISSING in report.text

    def test_infinite_imbalance_label(self, tmp_path) -> None:
        rows = [
            row("tent", "gn", 4, 10.0, 0.5),
            row("tent", "gn", 4, INF_IMBALANCE, 0.3),
        ]
        write_summary(rows, tmp_path)
        text = build_report(tmp_path).text
        assert "inf" in text
        assert "500000" not in text

    def test_shared_axis_value_is_averaged(self, tmp_path) -> None:
        rows = [
            row("tent", "ln", 4, 1.0, 0.4),
            row("tent", "ln", 4, 100.0, 0.6),
        ]
        write_summary(rows, tmp_path)
        table = build_report(tmp_path).tables["batch_size_ln"]
        assert table.loc["tent", 4] == pytest.approx(0.5)

    def test_norms_get_separate_tables(self, tmp_path) -> None:
        rows = [row("tent", "bn", 4, 1.0, 0.5), row("tent", "gn", 4, 1.0, 0.7)]
        write_summary(rows, tmp_path)
        report = build_report(tmp_path)
        assert report.tables["batch_size_bn"].loc["tent", 4] == 0.5
        assert report.tables["batch_size_gn"].loc["tent", 4] == 0.7

    def test_methods_follow_preset_order(self, tmp_path) -> None:
        rows = [
            row(preset, "bn", 1, 1000.0, 0.5)
            for preset in ("bot", "delta", "select", "tent")
        ]
        write_summary(rows, tmp_path)
        table = build_report(tmp_path).tables["batch_size_bn"]
        assert list(table.index) == ["tent", "select", "delta", "bot"]

    def test_empty_directory(self, tmp_path) -> None:
        with pytest.raises(ReportError):
            build_report(tmp_path)


def test_render_report_writes_files(tmp_path):
    results = tmp_path / "results"
    write_summary(
        [row("tent", "bn", 16, 1.0, 0.5), row("bot", "bn", 16, 1.0, 0.625)], results
    )
    report = render_report(results, tmp_path / "report")

    names = sorted(path.name for path in report.files)
    assert names == [
        "report.txt",
        "report_batch_size_bn.csv",
        "report_imbalance_bn.csv",
    ]
    table = pd.read_csv(tmp_path / "report" / "report_batch_size_bn.csv", index_col=0)
    assert table.loc["bot", "16"] == 0.625
    text = (tmp_path / "report" / "report.txt").read_text(encoding="utf-8")
    assert text == report.text
    assert "62.50" in text
