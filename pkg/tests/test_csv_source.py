from unittest.mock import MagicMock, patch

import httpx
import numpy as np
import pytest

from ttaforge.config import settings
from ttaforge.csv_source import (
    fetch_csv_text,
    is_remote,
    load_csv_dataset,
    parse_csv,
    rows_to_dataset,
)
from ttaforge.exceptions import DatasetFetchError, DatasetFormatError

URL = "https://example.com/data.csv"

# Two features, three classes, label column in the middle.
MOCK_CSV_CONTENT = """x1,label,x2
0.5,0,1.0
-1.25,2,3.5
2.0,1,-0.75
0.0,2,0.25
"""

INVALID_UTF8 = b"label,x\n0,1\n1,\xff\xfe2\n"


def test_fetch_and_load():
    with patch("ttaforge.csv_source.httpx.get") as mock_get:
        mock_response = MagicMock()
        mock_response.status_code = 200
        mock_response.content = MOCK_CSV_CONTENT.encode("utf-8-sig")
        mock_get.return_value = mock_response

        # 1. Fetch strips the byte-order mark
        assert fetch_csv_text(URL) == MOCK_CSV_CONTENT
        _, kwargs = mock_get.call_args
        assert kwargs["timeout"] == settings.CSV_TIMEOUT_SECONDS
        assert kwargs["follow_redirects"] is True

        # 2. Remote sources go through the same fetch
        data = load_csv_dataset(URL)
        assert data.num_classes == 3
        np.testing.assert_array_equal(data.labels, [0, 2, 1, 2])
        np.testing.assert_array_equal(data.features[1], [-1.25, 3.5])


def test_fetch_status_error():
    with patch("ttaforge.csv_source.httpx.get") as mock_get:
        request = httpx.Request("GET", URL)
        mock_response = MagicMock()
        mock_response.raise_for_status.side_effect = httpx.HTTPStatusError(
            "Not Found", request=request, response=httpx.Response(404, request=request)
        )
        mock_get.return_value = mock_response

        with pytest.raises(DatasetFetchError, match="404"):
            fetch_csv_text(URL)


def test_fetch_request_error():
    """Test that httpx.RequestError becomes a DatasetFetchError."""
    with patch("ttaforge.csv_source.httpx.get") as mock_get:
        mock_get.side_effect = httpx.RequestError(
            "Connection refused", request=httpx.Request("GET", URL)
        )

        with pytest.raises(DatasetFetchError):
            fetch_csv_text(URL)


def test_local_file(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(MOCK_CSV_CONTENT, encoding="utf-8")

    data = load_csv_dataset(path, num_classes=4)
    assert len(data) == 4
    assert data.dim == 2
    assert data.num_classes == 4


def test_local_file_missing(tmp_path):
    with pytest.raises(DatasetFetchError):
        load_csv_dataset(tmp_path / "absent.csv")


def test_is_remote():
    assert is_remote(URL)
    assert is_remote("http://example.com/x.csv")
    assert not is_remote("data/x.csv")


def test_empty_content_has_no_header():
    with pytest.raises(DatasetFormatError) as exc_info:
        parse_csv("")
    assert exc_info.value.line == 1


def test_missing_label_column():
    fieldnames, rows = parse_csv("a,b\n1,2\n3,4\n")
    with pytest.raises(DatasetFormatError, match="label"):
        rows_to_dataset(rows, fieldnames)


def test_no_feature_columns():
    fieldnames, rows = parse_csv("label\n0\n1\n")
    with pytest.raises(DatasetFormatError):
        rows_to_dataset(rows, fieldnames)


@pytest.mark.parametrize(
    "content,line",
    [
        ("x,label\n1.0,0\n2.0,one\n", 3),
        ("x,label\n1.0,0\nabc,1\n", 3),
        ("x,label\nnan,0\n2.0,1\n", 2),
        ("x,label\n1.0,0\n2.0,1\n3.0\n", 4),
        ("x,label\n1.0,0\n2.0,-1\n", 3),
        ("label,x\n0,1\n\n1,abc\n", 4),
        ("x,label\n\n1.0,0\n\n\n2.0,one\n", 6),
    ],
)
def test_bad_rows_report_line(content, line):
    fieldnames, rows = parse_csv(content)
    with pytest.raises(DatasetFormatError) as exc_info:
        rows_to_dataset(rows, fieldnames)
    assert exc_info.value.line == line
    assert str(exc_info.value).startswith(f"line {line}:")


def test_label_outside_declared_classes():
    fieldnames, rows = parse_csv("x,label\n1.0,0\n2.0,1\n3.0,5\n")
    with pytest.raises(DatasetFormatError) as exc_info:
        rows_to_dataset(rows, fieldnames, num_classes=3)
    assert exc_info.value.line == 4


def test_label_outside_declared_classes_after_blank_lines():
    fieldnames, rows = parse_csv("x,label\n1.0,0\n\n2.0,1\n\n3.0,5\n")
    with pytest.raises(DatasetFormatError) as exc_info:
        rows_to_dataset(rows, fieldnames, num_classes=3)
    assert exc_info.value.line == 6


def test_local_file_not_utf8(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(INVALID_UTF8)
    with pytest.raises(DatasetFormatError) as exc_info:
        load_csv_dataset(path)
    assert exc_info.value.line == 3


def test_remote_content_not_utf8():
    with patch("ttaforge.csv_source.httpx.get") as mock_get:
        mock_response = MagicMock()
        mock_response.content = INVALID_UTF8
        mock_get.return_value = mock_response

        with pytest.raises(DatasetFormatError, match="not valid UTF-8"):
            load_csv_dataset(URL)


def test_single_class_rejected():
    fieldnames, rows = parse_csv("x,label\n1.0,0\n2.0,0\n")
    with pytest.raises(DatasetFormatError):
        rows_to_dataset(rows, fieldnames)
