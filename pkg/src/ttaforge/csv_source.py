"""
CSV dataset ingestion.
Reads a labeled feature table from a local file or an http(s) URL.
"""

import csv
import io
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import httpx
import numpy as np

from .config import settings
from .exceptions import DatasetFetchError, DatasetFormatError
from .stream import LabeledDataset

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"

NumberedRow = Tuple[int, Dict[str, str]]


def is_remote(source: Union[str, Path]) -> bool:
    return str(source).startswith(("http://", "https://"))


def fetch_csv_text(url: str, timeout: Optional[float] = None) -> str:
    """
    Fetches CSV content over HTTP(S).

    Raises:
        DatasetFetchError: On transport errors or a non-success status.
    """
    try:
        response = httpx.get(
            url,
            headers={"Accept": "text/csv, */*"},
            timeout=timeout if timeout is not None else settings.CSV_TIMEOUT_SECONDS,
            follow_redirects=True,
        )
        response.raise_for_status()
    except httpx.HTTPStatusError as e:
        raise DatasetFetchError(
            f"fetching {url} failed with status {e.response.status_code}"
        ) from e
    except httpx.RequestError as e:
        raise DatasetFetchError(f"error fetching {url}: {e}") from e
    return decode_csv_bytes(response.content, url)


def decode_csv_bytes(raw: bytes, source: str) -> str:
    """Decode CSV bytes as UTF-8, dropping a leading byte-order mark.

    Raises:
        DatasetFormatError: If the bytes are not valid UTF-8; the error names
            the line holding the first bad byte.
    """
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise DatasetFormatError(
            f"{source} is not valid UTF-8 (byte {e.start})",
            line=raw.count(b"\n", 0, e.start) + 1,
        ) from e


def parse_csv(content: str) -> Tuple[List[str], List[NumberedRow]]:
    """
    Parses CSV content into its header and ``(line, row)`` pairs.

    Blank lines are skipped; ``line`` is the source line the row ends on.

    Raises:
        DatasetFormatError: If the content has no header row.
    """
    reader = csv.DictReader(io.StringIO(content))
    if not reader.fieldnames:
        raise DatasetFormatError("CSV has no header row", line=1)
    fieldnames = list(reader.fieldnames)
    return fieldnames, [(reader.line_num, row) for row in reader]


def rows_to_dataset(
    rows: List[NumberedRow],
    fieldnames: List[str],
    num_classes: Optional[int] = None,
) -> LabeledDataset:
    """Convert parsed rows into a ``LabeledDataset``.

    Every column except ``label`` is a numeric feature. Errors carry the
    source line of the offending row.

    Raises:
        DatasetFormatError: On a missing label column, no feature columns,
            non-numeric or non-finite values, or labels out of range.
    """
    if LABEL_COLUMN not in fieldnames:
        raise DatasetFormatError(f"missing '{LABEL_COLUMN}' column", line=1)
    feature_columns = [name for name in fieldnames if name != LABEL_COLUMN]
    if not feature_columns:
        raise DatasetFormatError("no feature columns", line=1)
    if not rows:
        raise DatasetFormatError("CSV has no data rows", line=2)

    features = np.empty((len(rows), len(feature_columns)))
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (line, row) in enumerate(rows):
        if None in row or any(row.get(name) is None for name in fieldnames):
            raise DatasetFormatError(
                f"expected {len(fieldnames)} fields", line=line
            )
        try:
            labels[i] = int(row[LABEL_COLUMN])
        except ValueError as e:
            raise DatasetFormatError(
                f"label {row[LABEL_COLUMN]!r} is not an integer", line=line
            ) from e
        for j, name in enumerate(feature_columns):
            try:
                value = float(row[name])
            except ValueError as e:
                raise DatasetFormatError(
                    f"column '{name}' value {row[name]!r} is not numeric", line=line
                ) from e
            if not math.isfinite(value):
                raise DatasetFormatError(f"column '{name}' is not finite", line=line)
            features[i, j] = value
        if labels[i] < 0:
            raise DatasetFormatError(f"negative label {labels[i]}", line=line)

    k = num_classes if num_classes is not None else int(labels.max()) + 1
    out_of_range = np.flatnonzero(labels >= k)
    if out_of_range.size:
        first = int(out_of_range[0])
        raise DatasetFormatError(
            f"label {labels[first]} outside [0, {k})", line=rows[first][0]
        )
    if k < 2:
        raise DatasetFormatError("CSV labels cover fewer than two classes")
    return LabeledDataset(features, labels, k)


def load_csv_dataset(
    source: Union[str, Path], num_classes: Optional[int] = None
) -> LabeledDataset:
    """Load a labeled dataset from a CSV path or URL.

    Args:
        source: Local path or http(s) URL.
        num_classes: Class count; inferred as ``max(label) + 1`` when omitted.

    Raises:
        DatasetFetchError: If a remote source cannot be fetched.
        DatasetFormatError: If the content is malformed.
    """
    if is_remote(source):
        content = fetch_csv_text(str(source))
    else:
        try:
            raw = Path(source).read_bytes()
        except OSError as e:
            raise DatasetFetchError(f"cannot read {source}: {e}") from e
        content = decode_csv_bytes(raw, str(source))
    fieldnames, rows = parse_csv(content)
    dataset = rows_to_dataset(rows, fieldnames, num_classes)
    logger.info(
        f"Loaded {len(dataset)} rows with {dataset.dim} features "
        f"and {dataset.num_classes} classes from {source}"
    )
    return dataset
