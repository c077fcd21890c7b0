"""Tabular data model: typed columns, CSV I/O, splits, and strata counts.

Tables are immutable after construction; every operation returns a new
table.  On disk a table is a UTF-8 CSV with a header row; binary cells are
serialized as "0"/"1", continuous cells with 12 significant digits, and
split tags (when present) travel in a reserved ``__split__`` column.
Continuous values are validated into [0, 1] at load and never clamped.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from ._rng import derive_rng
from .errors import DataError
from .metrics import BinaryJoint

__all__ = [
    "FeatureKind",
    "DataTable",
    "StrataCounts",
    "SPLIT_NAMES",
    "SPLIT_COLUMN",
    "load_table",
    "save_table",
    "split_table",
    "select_split",
    "take",
    "partition_strata",
    "empirical_joint",
]

SPLIT_NAMES = ("train", "validation", "test")
SPLIT_COLUMN = "__split__"
_SPLIT_CODE = {name: i for i, name in enumerate(SPLIT_NAMES)}


class FeatureKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


def _coerce_kind(kind) -> FeatureKind:
    if isinstance(kind, FeatureKind):
        return kind
    try:
        return FeatureKind(str(kind))
    except ValueError:
        raise DataError(f"unknown feature kind {kind!r}") from None


@dataclass(frozen=True)
class DataTable:
    """Columnar table with unique names, per-column kinds, and optional
    train/validation/test tags."""

    names: tuple[str, ...]
    kinds: tuple[FeatureKind, ...]
    columns: tuple[np.ndarray, ...]
    splits: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate column name in {self.names}")
        if SPLIT_COLUMN in self.names:
            raise DataError(f"{SPLIT_COLUMN!r} is a reserved column name")
        if not (len(self.names) == len(self.kinds) == len(self.columns)):
            raise DataError("names, kinds, and columns must align")
        if not self.columns:
            raise DataError("table needs at least one column")
        kinds = tuple(_coerce_kind(k) for k in self.kinds)
        n = len(self.columns[0])
        cols = []
        for name, kind, col in zip(self.names, kinds, self.columns):
            arr = np.asarray(col)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} must be one-dimensional")
            if len(arr) != n:
                raise DataError(f"column {name!r} has {len(arr)} rows, expected {n}")
            if kind is FeatureKind.BINARY:
                arr = arr.astype(np.int8, copy=True)
                if not np.isin(arr, (0, 1)).all():
                    raise DataError(f"binary column {name!r} contains values outside {{0, 1}}")
            else:
                arr = arr.astype(np.float64, copy=True)
                if not np.all(np.isfinite(arr)):
                    raise DataError(f"continuous column {name!r} contains non-finite values")
                if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                    raise DataError(f"continuous column {name!r} has values outside [0, 1]")
            arr.setflags(write=False)
            cols.append(arr)
        splits = self.splits
        if splits is not None:
            splits = np.asarray(splits, dtype=np.int8).copy()
            if len(splits) != n:
                raise DataError("split tags must cover every row")
            if splits.size and not np.isin(splits, (0, 1, 2)).all():
                raise DataError("split codes must be 0 (train), 1 (validation), or 2 (test)")
            splits.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "columns", tuple(cols))
        object.__setattr__(self, "splits", splits)

    @property
    def n_rows(self) -> int:
        return len(self.columns[0])

    @property
    def n_cols(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None

    def kind(self, name: str) -> FeatureKind:
        return self.kinds[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.index(name)]

    def binary_names(self) -> tuple[str, ...]:
        return tuple(n for n, k in zip(self.names, self.kinds) if k is FeatureKind.BINARY)

    def continuous_names(self) -> tuple[str, ...]:
        return tuple(n for n, k in zip(self.names, self.kinds) if k is FeatureKind.CONTINUOUS)

    @property
    def has_splits(self) -> bool:
        return self.splits is not None

    def split_indices(self, split: str) -> np.ndarray:
        if split not in _SPLIT_CODE:
            raise DataError(f"unknown split {split!r}, expected one of {SPLIT_NAMES}")
        if self.splits is None:
            raise DataError("table has no split tags")
        return np.flatnonzero(self.splits == _SPLIT_CODE[split])

    def split_counts(self) -> dict[str, int]:
        if self.splits is None:
            return {}
        return {name: int(np.sum(self.splits == code)) for name, code in _SPLIT_CODE.items()}

    def with_columns(self, columns: Sequence[np.ndarray]) -> "DataTable":
        return DataTable(self.names, self.kinds, tuple(columns), self.splits)

    def schema(self) -> dict[str, str]:
        return {n: k.value for n, k in zip(self.names, self.kinds)}

    def equals(self, other: "DataTable") -> bool:
        if self.names != other.names or self.kinds != other.kinds:
            return False
        if (self.splits is None) != (other.splits is None):
            return False
        if self.splits is not None and not np.array_equal(self.splits, other.splits):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.columns, other.columns))


def _parse_cell(token: str, kind: FeatureKind, row: int, name: str):
    token = token.strip()
    if kind is FeatureKind.BINARY:
        if token == "0":
            return 0
        if token == "1":
            return 1
        raise DataError(f"row {row}, column {name!r}: binary cell must be 0 or 1, got {token!r}")
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"row {row}, column {name!r}: cannot parse {token!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {name!r}: non-finite value {token!r}")
    if value < 0.0 or value > 1.0:
        raise DataError(f"row {row}, column {name!r}: value {value!r} outside [0, 1]")
    return value


def load_table(path, schema: Mapping[str, FeatureKind | str]) -> DataTable:
    """Load and validate a CSV against a declared schema.

    The header must contain exactly the schema's columns (plus an optional
    ``__split__`` column carrying train/validation/test tags).
    """
    kinds_by_name = {name: _coerce_kind(kind) for name, kind in schema.items()}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise DataError(f"{path}: duplicate column name(s) {dupes}")
        split_pos = header.index(SPLIT_COLUMN) if SPLIT_COLUMN in header else None
        data_names = [h for h in header if h != SPLIT_COLUMN]
        if set(data_names) != set(kinds_by_name):
            raise DataError(
                f"{path}: header columns {sorted(data_names)} do not match "
                f"schema columns {sorted(kinds_by_name)}"
            )
        values: list[list] = [[] for _ in data_names]
        split_tags: list[int] = []
        positions = [i for i, h in enumerate(header) if h != SPLIT_COLUMN]
        for row_num, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            for out, pos in zip(values, positions):
                name = header[pos]
                out.append(_parse_cell(row[pos], kinds_by_name[name], row_num, name))
            if split_pos is not None:
                tag = row[split_pos].strip()
                if tag not in _SPLIT_CODE:
                    raise DataError(
                        f"{path}: row {row_num}: unknown split tag {tag!r}, expected one of {SPLIT_NAMES}"
                    )
                split_tags.append(_SPLIT_CODE[tag])
    if not values[0]:
        raise DataError(f"{path}: no data rows")
    kinds = tuple(kinds_by_name[name] for name in data_names)
    columns = tuple(np.asarray(col) for col in values)
    splits = np.asarray(split_tags, dtype=np.int8) if split_pos is not None else None
    return DataTable(tuple(data_names), kinds, columns, splits)


def save_table(table: DataTable, path) -> None:
    """Write a table as CSV; inverse of :func:`load_table` up to 1e-12 on
    continuous cells and bit-exact on binary cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(table.names)
        if table.has_splits:
            header.append(SPLIT_COLUMN)
        writer.writerow(header)
        formatted = []
        for kind, col in zip(table.kinds, table.columns):
            if kind is FeatureKind.BINARY:
                formatted.append([str(int(v)) for v in col])
            else:
                formatted.append([format(v, ".12g") for v in col])
        if table.has_splits:
            formatted.append([SPLIT_NAMES[c] for c in table.splits])
        writer.writerows(zip(*formatted))


def split_table(table: DataTable, fractions: Sequence[float], seed: int) -> DataTable:
    """Assign train/validation/test tags by a seeded uniform shuffle.

    Tag counts are floor(fraction*N) with the remainder going to train.
    """
    if len(fractions) != 3:
        raise DataError(f"expected 3 fractions (train, validation, test), got {len(fractions)}")
    fracs = [float(f) for f in fractions]
    if any(f < 0 for f in fracs):
        raise DataError(f"fractions must be nonnegative, got {fracs}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fracs)!r}")
    n = table.n_rows
    n_val = int(math.floor(fracs[1] * n))
    n_test = int(math.floor(fracs[2] * n))
    n_train = n - n_val - n_test
    perm = derive_rng(seed, "split").permutation(n)
    codes = np.empty(n, dtype=np.int8)
    codes[perm[:n_train]] = 0
    codes[perm[n_train : n_train + n_val]] = 1
    codes[perm[n_train + n_val :]] = 2
    return DataTable(table.names, table.kinds, table.columns, codes)


def take(table: DataTable, rows: np.ndarray, keep_splits: bool = True) -> DataTable:
    """Row subset of a table, preserving order of ``rows``."""
    rows = np.asarray(rows)
    cols = tuple(c[rows] for c in table.columns)
    splits = table.splits[rows] if (keep_splits and table.has_splits) else None
    return DataTable(table.names, table.kinds, cols, splits)


def select_split(table: DataTable, split: str) -> DataTable:
    """The rows of one split, as an untagged table."""
    return take(table, table.split_indices(split), keep_splits=False)


@dataclass(frozen=True)
class StrataCounts:
    """Per-stratum 2x2 counts of a feature pair.

    Strata are keyed by the bit pattern of the remaining binary features
    (``remaining``, in that order); each value is (n00, n01, n10, n11)
    for the pair.
    """

    pair: tuple[str, str]
    remaining: tuple[str, ...]
    counts: dict[str, tuple[int, int, int, int]]

    def __post_init__(self) -> None:
        for key, cells in self.counts.items():
            if len(key) != len(self.remaining):
                raise DataError(f"stratum key {key!r} does not match remaining features")
            if any(c < 0 for c in cells):
                raise DataError(f"negative count in stratum {key!r}")

    def stratum_total(self, key: str) -> int:
        return sum(self.counts[key])

    def global_counts(self) -> tuple[int, int, int, int]:
        totals = [0, 0, 0, 0]
        for cells in self.counts.values():
            for i, c in enumerate(cells):
                totals[i] += c
        return tuple(totals)

    @property
    def n_rows(self) -> int:
        return sum(self.global_counts())

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "remaining": list(self.remaining),
            "strata": [
                {"key": key, "counts": list(cells)}
                for key, cells in sorted(self.counts.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _strata_keys(table_cols: Sequence[np.ndarray]) -> np.ndarray:
    """Encode remaining-feature bit patterns as integers (bit j = feature j)."""
    if not table_cols:
        return None
    keys = np.zeros(len(table_cols[0]), dtype=np.int64)
    for j, col in enumerate(table_cols):
        keys |= col.astype(np.int64) << j
    return keys


def _key_string(code: int, width: int) -> str:
    return "".join("1" if (code >> j) & 1 else "0" for j in range(width))


def group_pair_cells(
    x: np.ndarray, y: np.ndarray, remaining: Sequence[np.ndarray]
) -> dict[str, dict[tuple[int, int], np.ndarray]]:
    """Row indices per (stratum key, pair cell) for binary arrays."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    cells = 2 * x + y
    if remaining:
        keys = _strata_keys(remaining)
    else:
        keys = np.zeros(len(x), dtype=np.int64)
    combined = keys * 4 + cells
    order = np.argsort(combined, kind="stable")
    groups: dict[str, dict[tuple[int, int], np.ndarray]] = {}
    uniq, starts = np.unique(combined[order], return_index=True)
    bounds = np.append(starts, len(order))
    for code, lo, hi in zip(uniq, bounds[:-1], bounds[1:]):
        key = _key_string(int(code) // 4, len(remaining))
        cell = divmod(int(code) % 4, 2)
        groups.setdefault(key, {})[cell] = order[lo:hi]
    return groups


def strata_cell_rows(
    table: DataTable, pair: tuple[str, str]
) -> tuple[tuple[str, ...], dict[str, dict[tuple[int, int], np.ndarray]]]:
    """Row indices per (stratum, pair-cell); backbone of the multivariate
    attack and of :func:`partition_strata`."""
    x_name, y_name = pair
    if x_name == y_name:
        raise DataError("pair features must be distinct")
    for name in pair:
        if table.kind(name) is not FeatureKind.BINARY:
            raise DataError(f"pair feature {name!r} must be binary")
    remaining = tuple(n for n in table.names if n not in pair)
    for name in remaining:
        if table.kind(name) is not FeatureKind.BINARY:
            raise DataError(f"non-binary column {name!r} in the strata scope")
    groups = group_pair_cells(
        table.column(x_name), table.column(y_name), [table.column(n) for n in remaining]
    )
    return remaining, groups


def partition_strata(table: DataTable, pair: tuple[str, str]) -> StrataCounts:
    """Group rows by the remaining binary features and tally the pair's
    2x2 counts within each group."""
    remaining, groups = strata_cell_rows(table, pair)
    counts = {
        key: tuple(
            len(cells.get((x, y), ())) for x, y in ((0, 0), (0, 1), (1, 0), (1, 1))
        )
        for key, cells in groups.items()
    }
    return StrataCounts(pair=tuple(pair), remaining=remaining, counts=counts)


def empirical_joint(table: DataTable, pair: tuple[str, str], rows: np.ndarray | None = None) -> BinaryJoint:
    """Empirical 2x2 joint of two binary columns (over ``rows`` if given)."""
    x_name, y_name = pair
    for name in pair:
        if table.kind(name) is not FeatureKind.BINARY:
            raise DataError(f"pair feature {name!r} must be binary")
    x = table.column(x_name)
    y = table.column(y_name)
    if rows is not None:
        rows = np.asarray(rows)
        x = x[rows]
        y = y[rows]
    if len(x) == 0:
        raise DataError("empty table: joint undefined")
    cells = np.bincount(2 * x.astype(np.int64) + y.astype(np.int64), minlength=4)
    return BinaryJoint.from_counts(*(int(c) for c in cells))
