"""Immutable observation table and CSV ingestion."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = ["Dataset", "DataError", "ingest_csv"]

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "null", "NULL"})


class DataError(ValueError):
    """Problem with the input data (unreadable, malformed, unknown column)."""


@dataclass(frozen=True)
class Dataset:
    """Column store with stable observation ids.

    Numeric columns are float arrays with NaN for missing cells; categorical
    columns are object arrays of strings with None for missing cells.
    """

    columns: Mapping[str, np.ndarray]
    ids: tuple

    def __post_init__(self):
        n = len(self.ids)
        for name, col in self.columns.items():
            if len(col) != n:
                raise DataError(f"column {name!r} has {len(col)} rows, expected {n}")
            col.setflags(write=False)

    @classmethod
    def from_columns(cls, columns: Mapping[str, Iterable], ids=None) -> "Dataset":
        cols = {}
        for name, values in columns.items():
            arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values)
            if arr.dtype.kind in "biuf":
                cols[name] = arr.astype(float)
            else:
                cols[name] = np.array([None if v is None else str(v) for v in arr], dtype=object)
        n = len(next(iter(cols.values()))) if cols else 0
        ids = tuple(range(1, n + 1)) if ids is None else tuple(ids)
        return cls(cols, ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    def __contains__(self, name) -> bool:
        return name in self.columns

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def is_categorical(self, name) -> bool:
        return self[name].dtype == object

    def missing(self, name) -> np.ndarray:
        col = self[name]
        if col.dtype == object:
            return np.array([v is None for v in col], dtype=bool)
        return np.isnan(col)

    def levels(self, name) -> list[str]:
        col = self[name]
        if col.dtype != object:
            raise DataError(f"column {name!r} is numeric, not categorical")
        return sorted({v for v in col if v is not None})


def _parse_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def ingest_csv(path) -> Dataset:
    """Read a UTF-8 CSV with a header row.

    Columns whose non-missing cells all parse as numbers become numeric, the
    rest categorical. Observation ids are the 1-based row numbers.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    seen = set()
    for h in header:
        if h in seen:
            raise DataError(f"duplicate column name {h!r} in {path}")
        seen.add(h)
    body = rows[1:]
    if not body:
        raise DataError(f"{path} has no data rows")
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")

    columns = {}
    for j, name in enumerate(header):
        cells = [row[j].strip() for row in body]
        present = [c for c in cells if c not in MISSING_TOKENS]
        parsed = [_parse_float(c) for c in present]
        if all(p is not None for p in parsed):
            columns[name] = np.array(
                [np.nan if c in MISSING_TOKENS else float(c) for c in cells], dtype=float
            )
        else:
            columns[name] = np.array([None if c in MISSING_TOKENS else c for c in cells], dtype=object)
        n_missing = len(cells) - len(present)
        if n_missing:
            log.info("column %r: %d missing cells", name, n_missing)
    return Dataset(columns, tuple(range(1, len(body) + 1)))
