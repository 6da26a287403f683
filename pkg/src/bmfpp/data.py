"""Sparse ratings containers, file loaders/writers, splitting, and statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ParseError

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


@dataclass(frozen=True, eq=False)
class SparseRatings:
    """Observed ratings matrix as index triplets.

    Immutable after construction; safe to share across workers. Indices are
    0-based, `values[k]` is the rating at (rows[k], cols[k]). Scale bounds
    default to the observed value range.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    scale_min: float | None = None
    scale_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", np.ascontiguousarray(self.rows, dtype=np.int64))
        object.__setattr__(self, "cols", np.ascontiguousarray(self.cols, dtype=np.int64))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))
        if not (self.rows.shape == self.cols.shape == self.values.shape) or self.rows.ndim != 1:
            raise DataError("rows, cols, values must be 1-d arrays of equal length")
        lo, hi = _resolve_scale(self.values, self.scale_min, self.scale_max)
        object.__setattr__(self, "scale_min", lo)
        object.__setattr__(self, "scale_max", hi)
        validate_ratings(self)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def keys(self) -> np.ndarray:
        """Flattened (row, col) keys, unique per entry."""
        return self.rows * np.int64(self.n_cols) + self.cols


def validate_ratings(data: SparseRatings) -> None:
    if data.n_rows < 0 or data.n_cols < 0:
        raise DataError("dimensions must be non-negative")
    if data.nnz == 0:
        return
    if data.rows.min() < 0 or data.rows.max() >= data.n_rows:
        raise DataError("row index out of bounds")
    if data.cols.min() < 0 or data.cols.max() >= data.n_cols:
        raise DataError("col index out of bounds")
    keys = data.keys()
    if np.unique(keys).size != keys.size:
        raise DataError("duplicate (row, col) entries")
    if data.values.min() < data.scale_min or data.values.max() > data.scale_max:
        raise DataError(
            f"values outside declared scale [{data.scale_min}, {data.scale_max}]"
        )
    if not np.isfinite(data.values).all():
        raise DataError("non-finite rating value")


def _resolve_scale(values: np.ndarray, scale_min, scale_max) -> tuple[float, float]:
    if values.size == 0:
        return (float(scale_min or 0.0), float(scale_max or 0.0))
    lo = float(values.min()) if scale_min is None else float(scale_min)
    hi = float(values.max()) if scale_max is None else float(scale_max)
    return lo, hi


def load_matrix_market(path, scale_min=None, scale_max=None) -> SparseRatings:
    """Read a MatrixMarket coordinate file (1-based indices) into SparseRatings.

    The header must declare a coordinate, real, general matrix. Scale bounds
    default to the observed min/max unless overridden.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].strip()
    fields = header.lower().split()
    if (
        len(fields) != 5
        or not fields[0].startswith("%%matrixmarket")
        or fields[1] != "matrix"
        or fields[2] != "coordinate"
        or fields[3] not in ("real", "integer")
        or fields[4] != "general"
    ):
        raise ParseError(f"unsupported MatrixMarket header: {header!r}", line=1)
    lineno = 1
    idx = 1
    while idx < len(lines) and (lines[idx].startswith("%") or not lines[idx].strip()):
        idx += 1
    if idx >= len(lines):
        raise ParseError("missing size line", line=len(lines))
    lineno = idx + 1
    parts = lines[idx].split()
    if len(parts) != 3:
        raise ParseError(f"bad size line: {lines[idx].strip()!r}", line=lineno)
    try:
        n_rows, n_cols, nnz = (int(p) for p in parts)
    except ValueError:
        raise ParseError(f"bad size line: {lines[idx].strip()!r}", line=lineno) from None

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    k = 0
    for off, raw in enumerate(lines[idx + 1:], start=lineno + 1):
        if not raw.strip() or raw.startswith("%"):
            continue
        if k >= nnz:
            raise ParseError(f"more than the declared {nnz} entries", line=off)
        parts = raw.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'row col value', got {raw.strip()!r}", line=off)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"non-numeric field in {raw.strip()!r}", line=off) from None
        if not (1 <= i <= n_rows) or not (1 <= j <= n_cols):
            raise ParseError(f"index ({i}, {j}) outside declared {n_rows} x {n_cols}", line=off)
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
        k += 1
    if k != nnz:
        raise ParseError(f"declared {nnz} entries but file has {k}", line=len(lines))
    _check_duplicates_with_line(rows, cols, n_cols, lines=lines, offset=idx + 1)
    return SparseRatings(n_rows, n_cols, rows, cols, vals, scale_min, scale_max)


def _check_duplicates_with_line(rows, cols, n_cols, lines, offset):
    if rows.size == 0:
        return
    keys = rows * np.int64(max(n_cols, 1)) + cols
    uniq, counts = np.unique(keys, return_counts=True)
    if uniq.size == keys.size:
        return
    dup_key = uniq[counts > 1][0]
    hits = np.flatnonzero(keys == dup_key)
    # map entry ordinal back to a file line, skipping blanks/comments
    ordinal = hits[1]
    seen = -1
    for li in range(offset, len(lines)):
        raw = lines[li]
        if not raw.strip() or raw.startswith("%"):
            continue
        seen += 1
        if seen == ordinal:
            r, c = int(rows[hits[0]]), int(cols[hits[0]])
            raise ParseError(f"duplicate entry for ({r}, {c})", line=li + 1)
    raise DataError("duplicate (row, col) entries")


def load_csv_triplets(path, has_header=False, n_rows=None, n_cols=None,
                      scale_min=None, scale_max=None) -> SparseRatings:
    """Read 'row,col,value' triplets with 0-based indices.

    Dimensions default to max index + 1 unless declared.
    """
    rows, cols, vals, linenos = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if lineno == 1 and has_header:
                continue
            if not raw.strip():
                continue
            parts = raw.strip().split(",")
            if len(parts) != 3:
                raise ParseError(f"expected 'row,col,value', got {raw.strip()!r}", line=lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"non-numeric field in {raw.strip()!r}", line=lineno) from None
            if i < 0 or j < 0:
                raise ParseError(f"negative index ({i}, {j})", line=lineno)
            rows.append(i)
            cols.append(j)
            vals.append(v)
            linenos.append(lineno)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    nr = int(n_rows) if n_rows is not None else (int(rows.max()) + 1 if rows.size else 0)
    nc = int(n_cols) if n_cols is not None else (int(cols.max()) + 1 if cols.size else 0)
    if rows.size:
        keys = rows * np.int64(max(nc, 1)) + cols
        uniq, counts = np.unique(keys, return_counts=True)
        if uniq.size != keys.size:
            dup_key = uniq[counts > 1][0]
            second = int(np.flatnonzero(keys == dup_key)[1])
            r, c = int(rows[second]), int(cols[second])
            raise ParseError(f"duplicate entry for ({r}, {c})", line=linenos[second])
    return SparseRatings(nr, nc, rows, cols, vals, scale_min, scale_max)


def write_matrix_market(data: SparseRatings, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{data.n_rows} {data.n_cols} {data.nnz}\n")
        for i, j, v in zip(data.rows, data.cols, data.values):
            fh.write(f"{i + 1} {j + 1} {v!r}\n")


def write_csv_triplets(data: SparseRatings, path, header=False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("row,col,value\n")
        for i, j, v in zip(data.rows, data.cols, data.values):
            fh.write(f"{i},{j},{v!r}\n")


def train_test_split(data: SparseRatings, test_fraction: float, seed: int):
    """Disjoint (train, test) split with |test| = round(test_fraction * nnz).

    Deterministic for a fixed seed; both outputs keep the input dimensions
    and scale bounds.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if data.nnz == 0:
        raise DataError("cannot split an empty ratings set")
    n_test = int(round(test_fraction * data.nnz))
    perm = np.random.default_rng(seed).permutation(data.nnz)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    def take(idx):
        return SparseRatings(
            data.n_rows, data.n_cols,
            data.rows[idx], data.cols[idx], data.values[idx],
            data.scale_min, data.scale_max,
        )

    return take(train_idx), take(test_idx)


@dataclass(frozen=True)
class DatasetStats:
    """Summary statistics in the style of a benchmark-dataset table."""

    n_rows: int
    n_cols: int
    n_ratings: int
    sparsity: float
    ratings_per_row: float
    rows_per_col_ratio: float

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "n_ratings": self.n_ratings,
            "sparsity": self.sparsity,
            "ratings_per_row": self.ratings_per_row,
            "rows_per_col_ratio": self.rows_per_col_ratio,
        }


def same_ratings(a: SparseRatings, b: SparseRatings) -> bool:
    """Structural equality, insensitive to entry order."""
    if (a.n_rows, a.n_cols, a.nnz) != (b.n_rows, b.n_cols, b.nnz):
        return False
    if (a.scale_min, a.scale_max) != (b.scale_min, b.scale_max):
        return False
    ka, kb = np.argsort(a.keys()), np.argsort(b.keys())
    return (
        np.array_equal(a.rows[ka], b.rows[kb])
        and np.array_equal(a.cols[ka], b.cols[kb])
        and np.array_equal(a.values[ka], b.values[kb])
    )


def compute_stats(data: SparseRatings) -> DatasetStats:
    """Sparsity (rows*cols/ratings), ratings per row, and #rows/#cols."""
    if data.nnz == 0:
        raise DataError("stats undefined for empty ratings set")
    return DatasetStats(
        n_rows=data.n_rows,
        n_cols=data.n_cols,
        n_ratings=data.nnz,
        sparsity=data.n_rows * data.n_cols / data.nnz,
        ratings_per_row=data.nnz / data.n_rows,
        rows_per_col_ratio=data.n_rows / data.n_cols,
    )
