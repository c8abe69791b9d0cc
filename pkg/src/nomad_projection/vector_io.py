"""Reading vector datasets and reading/writing 2-D layouts.

Two input formats are understood:

* ``raw-f32``: headerless little-endian float32, row-major, shape supplied
  by the caller.
* ``csv``: a rectangular numeric table, optionally preceded by a single
  non-numeric header row.

Layouts are written as ``id,x,y[,label]`` CSV with 17 significant digits so
that a save/load cycle is bit exact.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ParameterError, SchemaError, ValidationError

FORMATS = ("raw-f32", "csv")


@dataclass(frozen=True)
class VectorDataset:
    data: np.ndarray
    ids: tuple[str, ...] = ()
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got shape {data.shape}")
        n, d = data.shape
        if n < 2 or d < 1:
            raise DimensionError(f"need at least 2 rows and 1 column, got {n}x{d}")
        _check_finite(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise DimensionError(f"{len(ids)} ids for {n} rows")
        if len(set(ids)) != n:
            raise ValidationError("ids must be unique")
        object.__setattr__(self, "ids", ids)

        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != n:
                raise DimensionError(f"{len(labels)} labels for {n} rows")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass
class LayoutMatrix:
    positions: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise DimensionError(f"layout must be n x 2, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("layout contains non-finite coordinates")
        if self.epoch < 0:
            raise ParameterError("epoch must be non-negative")
        self.positions = pos

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass
class LoadedLayout:
    layout: LayoutMatrix
    ids: list[str]
    labels: list[str] | None = field(default=None)


def _check_finite(data: np.ndarray) -> None:
    bad = ~np.isfinite(data)
    if bad.any():
        row, col = (int(v) for v in np.argwhere(bad)[0])
        raise ValidationError(
            f"non-finite value {data[row, col]!r} at row {row}, column {col}"
        )


def load_vectors(
    path: str | os.PathLike,
    format: str = "raw-f32",
    rows: int | None = None,
    dims: int | None = None,
    labels: Sequence[str] | None = None,
) -> VectorDataset:
    """Load a vector dataset from ``path``.

    For ``raw-f32`` at least one of ``rows``/``dims`` must be given; the
    other is inferred from the file length. Raises :class:`DimensionError`
    if the byte count does not match, :class:`ValidationError` (with the
    offending row and column) on NaN/Inf, and ``OSError`` if unreadable.
    """
    if format not in FORMATS:
        raise ParameterError(f"unknown format {format!r}; expected one of {FORMATS}")
    if format == "raw-f32":
        data = _read_raw_f32(path, rows, dims)
    else:
        data = _read_csv_matrix(path)
        if rows is not None and data.shape[0] != rows:
            raise DimensionError(f"expected {rows} rows, file has {data.shape[0]}")
        if dims is not None and data.shape[1] != dims:
            raise DimensionError(f"expected {dims} columns, file has {data.shape[1]}")
    return VectorDataset(data=data, labels=labels)


def _read_raw_f32(path, rows, dims) -> np.ndarray:
    size = os.path.getsize(path)
    if rows is None and dims is None:
        raise ParameterError("raw-f32 needs rows and/or dims")
    if size % 4:
        raise DimensionError(f"file length {size} is not a multiple of 4 bytes")
    count = size // 4
    if rows is None:
        rows = count // dims if dims else 0
    elif dims is None:
        dims = count // rows if rows else 0
    if rows * dims * 4 != size:
        raise DimensionError(
            f"{rows} rows x {dims} dims x 4 bytes = {rows * dims * 4}, file has {size}"
        )
    raw = np.fromfile(path, dtype="<f4", count=count)
    return raw.reshape(rows, dims).astype(np.float32)


def _parse_row(row: list[str]) -> list[float] | None:
    try:
        return [float(x) for x in row]
    except ValueError:
        return None


def _read_csv_matrix(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not records:
        raise DimensionError(f"{path}: empty table")
    if _parse_row(records[0]) is None:
        records = records[1:]
    width = len(records[0]) if records else 0
    values = []
    for lineno, rec in enumerate(records):
        if len(rec) != width:
            raise DimensionError(f"{path}: row {lineno} has {len(rec)} fields, expected {width}")
        parsed = _parse_row(rec)
        if parsed is None:
            raise ValidationError(f"{path}: row {lineno} is not numeric")
        values.append(parsed)
    return np.array(values, dtype=np.float64).astype(np.float32)


def load_labels(path: str | os.PathLike) -> list[str]:
    """One label per line; blank trailing lines are ignored."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    return lines


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_layout(
    layout: LayoutMatrix,
    ids: Sequence[str],
    path: str | os.PathLike,
    labels: Sequence[str] | None = None,
) -> None:
    pos = layout.positions
    if len(ids) != pos.shape[0]:
        raise DimensionError(f"{len(ids)} ids for a layout with {pos.shape[0]} rows")
    if labels is not None and len(labels) != pos.shape[0]:
        raise DimensionError(f"{len(labels)} labels for a layout with {pos.shape[0]} rows")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "x", "y"] + (["label"] if labels is not None else []))
    for r in range(pos.shape[0]):
        row = [ids[r], _fmt(pos[r, 0]), _fmt(pos[r, 1])]
        if labels is not None:
            row.append(labels[r])
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_layout(path: str | os.PathLike) -> LoadedLayout:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty layout file")
        cols = {name.strip(): idx for idx, name in enumerate(header)}
        missing = [c for c in ("id", "x", "y") if c not in cols]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        has_labels = "label" in cols
        ids, xs, ys, labels = [], [], [], []
        for rec in reader:
            if not rec:
                continue
            ids.append(rec[cols["id"]])
            xs.append(float(rec[cols["x"]]))
            ys.append(float(rec[cols["y"]]))
            if has_labels:
                labels.append(rec[cols["label"]])
    pos = np.column_stack([np.array(xs, dtype=np.float64), np.array(ys, dtype=np.float64)])
    return LoadedLayout(
        layout=LayoutMatrix(pos.reshape(len(xs), 2)),
        ids=ids,
        labels=labels if has_labels else None,
    )
