"""CSV dataset loading and splitting."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .fitting import Dataset

log = logging.getLogger(__name__)

__all__ = ["DataSpec", "load_csv", "train_test_split"]


@dataclass
class DataSpec:
    """Where and how to read a dataset.

    ``target`` selects the target column by name (requires a header) or
    defaults to the last column.  ``has_header`` of ``None`` auto-detects by
    trying to parse the first row as numbers.  ``row_cap`` keeps that many
    rows, chosen at random under ``cap_seed``.
    """

    path: str | Path
    target: Optional[str] = None
    delimiter: str = ","
    has_header: Optional[bool] = None
    row_cap: Optional[int] = None
    cap_seed: int = 0

    def __post_init__(self) -> None:
        if self.row_cap is not None and self.row_cap < 1:
            raise ValueError("row_cap must be >= 1")


def _is_numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(spec: DataSpec) -> Dataset:
    """Parse a rectangular numeric table; the target column moves into ``y``."""
    with open(spec.path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh, delimiter=spec.delimiter)]
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValueError(f"{spec.path}: empty file")

    has_header = spec.has_header
    if has_header is None:
        has_header = not all(_is_numeric(c.strip()) for c in rows[0])
    if has_header:
        header = [c.strip() for c in rows[0]]
        body = rows[1:]
        first_data_row = 2
    else:
        header = [f"x{i}" for i in range(len(rows[0]))]
        body = rows
        first_data_row = 1
    if not body:
        raise ValueError(f"{spec.path}: no data rows")

    width = len(header)
    table = np.empty((len(body), width))
    for r, row in enumerate(body):
        if len(row) != width:
            raise ValueError(
                f"{spec.path}: ragged row {r + first_data_row}: "
                f"expected {width} columns, got {len(row)}"
            )
        for c, cell in enumerate(row):
            try:
                table[r, c] = float(cell.strip())
            except ValueError:
                raise ValueError(
                    f"{spec.path}: non-numeric cell {cell.strip()!r} at "
                    f"({r + first_data_row},{c + 1})"
                ) from None

    if spec.target is None:
        target_idx = width - 1
    else:
        if spec.target not in header:
            raise ValueError(f"{spec.path}: no column named {spec.target!r}")
        target_idx = header.index(spec.target)

    if spec.row_cap is not None and spec.row_cap < table.shape[0]:
        rng = np.random.default_rng(spec.cap_seed)
        keep = np.sort(rng.permutation(table.shape[0])[: spec.row_cap])
        table = table[keep]
        log.info("capped %s to %d rows", spec.path, spec.row_cap)

    y = table[:, target_idx]
    X = np.delete(table, target_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != target_idx]
    return Dataset(X, y, names)


def train_test_split(
    d: Dataset, test_fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """Deterministic random holdout; train size is round(n * (1 - f))."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = d.n_rows
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    n_train = int(round(n * (1.0 - test_fraction)))
    n_train = min(max(n_train, 1), n - 1)
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return d.take(train_idx), d.take(test_idx)
