"""Row/column partitioning of a ratings matrix into an I x J block grid."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import SparseRatings
from .errors import ConfigError, DataError

STRATEGIES = ("random", "contiguous")


@dataclass(frozen=True, eq=False)
class BlockGrid:
    """Seeded permutations plus group boundaries defining an I x J partition.

    Group i of the row axis owns the global rows
    `row_perm[row_bounds[i]:row_bounds[i+1]]`; a row's local index inside any
    block of that group is its offset in that slice (consistent across all
    blocks sharing the group). Same for columns.
    """

    I: int
    J: int
    row_perm: np.ndarray
    col_perm: np.ndarray
    row_bounds: np.ndarray
    col_bounds: np.ndarray
    seed: int
    strategy: str = "random"

    def __post_init__(self):
        for name in ("row_perm", "col_perm", "row_bounds", "col_bounds"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.int64))
        _validate_axis(self.row_perm, self.row_bounds, self.I, "row")
        _validate_axis(self.col_perm, self.col_bounds, self.J, "col")
        # inverse lookups: global index -> (group, local index)
        object.__setattr__(self, "_row_group", _group_of(self.row_perm, self.row_bounds))
        object.__setattr__(self, "_row_local", _local_of(self.row_perm, self.row_bounds))
        object.__setattr__(self, "_col_group", _group_of(self.col_perm, self.col_bounds))
        object.__setattr__(self, "_col_local", _local_of(self.col_perm, self.col_bounds))

    @property
    def n_rows(self) -> int:
        return int(self.row_perm.size)

    @property
    def n_cols(self) -> int:
        return int(self.col_perm.size)

    def row_group_sizes(self) -> np.ndarray:
        return np.diff(self.row_bounds)

    def col_group_sizes(self) -> np.ndarray:
        return np.diff(self.col_bounds)

    def rows_of_group(self, i: int) -> np.ndarray:
        return self.row_perm[self.row_bounds[i]:self.row_bounds[i + 1]]

    def cols_of_group(self, j: int) -> np.ndarray:
        return self.col_perm[self.col_bounds[j]:self.col_bounds[j + 1]]

    def row_group(self) -> np.ndarray:
        """Per global row: its group index."""
        return self._row_group

    def row_local(self) -> np.ndarray:
        """Per global row: its local index within its group."""
        return self._row_local

    def col_group(self) -> np.ndarray:
        return self._col_group

    def col_local(self) -> np.ndarray:
        return self._col_local


def _validate_axis(perm, bounds, groups, name):
    n = perm.size
    if bounds.size != groups + 1 or bounds[0] != 0 or bounds[-1] != n:
        raise DataError(f"{name} bounds must run from 0 to {n} with {groups} groups")
    if np.any(np.diff(bounds) <= 0):
        raise DataError(f"every {name} group must be non-empty")
    if np.any(np.sort(perm) != np.arange(n)):
        raise DataError(f"{name}_perm is not a permutation")


def _group_of(perm, bounds):
    out = np.empty(perm.size, dtype=np.int64)
    for g in range(bounds.size - 1):
        out[perm[bounds[g]:bounds[g + 1]]] = g
    return out


def _local_of(perm, bounds):
    out = np.empty(perm.size, dtype=np.int64)
    for g in range(bounds.size - 1):
        out[perm[bounds[g]:bounds[g + 1]]] = np.arange(bounds[g + 1] - bounds[g])
    return out


def balanced_bounds(n: int, groups: int) -> np.ndarray:
    """Boundaries cutting 0..n into `groups` parts whose sizes differ by <= 1."""
    base, rem = divmod(n, groups)
    sizes = np.full(groups, base, dtype=np.int64)
    sizes[:rem] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def build_grid(data: SparseRatings, I: int, J: int, strategy: str = "random",
               seed: int = 0) -> BlockGrid:
    """Partition the matrix into I x J blocks with balanced group sizes.

    "random" permutes rows and columns with the seeded generator before
    cutting; "contiguous" keeps identity order.
    """
    if not (1 <= I <= data.n_rows):
        raise ConfigError(f"I must be in [1, {data.n_rows}], got {I}")
    if not (1 <= J <= data.n_cols):
        raise ConfigError(f"J must be in [1, {data.n_cols}], got {J}")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy == "random":
        gen = np.random.default_rng(seed)
        row_perm = gen.permutation(data.n_rows)
        col_perm = gen.permutation(data.n_cols)
    else:
        row_perm = np.arange(data.n_rows)
        col_perm = np.arange(data.n_cols)
    return BlockGrid(
        I=I, J=J,
        row_perm=row_perm, col_perm=col_perm,
        row_bounds=balanced_bounds(data.n_rows, I),
        col_bounds=balanced_bounds(data.n_cols, J),
        seed=int(seed), strategy=strategy,
    )


def suggest_grid(data: SparseRatings, target_blocks: int) -> tuple[int, int]:
    """Pick (I, J) with I*J in [target, 2*target) whose blocks are closest
    to square, i.e. minimizing |log((N/I)/(D/J))|.

    Ties break toward smaller I*J, then smaller I.
    """
    if target_blocks < 1:
        raise ConfigError(f"target_blocks must be >= 1, got {target_blocks}")
    n, d = data.n_rows, data.n_cols
    best = None
    for i in range(1, min(n, 2 * target_blocks - 1) + 1):
        j_lo = max(1, -(-target_blocks // i))          # ceil(target / i)
        j_hi = min(d, (2 * target_blocks - 1) // i)    # floor((2t - 1) / i)
        for j in range(j_lo, j_hi + 1):
            score = abs(math.log((n / i) / (d / j)))
            key = (score, i * j, i)
            if best is None or key < best[0]:
                best = (key, (i, j))
    if best is None:
        raise ConfigError(
            f"no feasible grid with {target_blocks} <= I*J < {2 * target_blocks} "
            f"for a {n} x {d} matrix"
        )
    return best[1]


@dataclass(frozen=True, eq=False)
class Block:
    """One sub-matrix of the partition, re-indexed to local 0-based indices.

    `row_map[local] = global row`, likewise `col_map`; the maps invert the
    extraction exactly.
    """

    i: int
    j: int
    ratings: SparseRatings
    row_map: np.ndarray
    col_map: np.ndarray


def extract_block(data: SparseRatings, grid: BlockGrid, i: int, j: int) -> Block:
    """Entries of block (i, j) with local indices plus the local->global maps."""
    if not (0 <= i < grid.I) or not (0 <= j < grid.J):
        raise ConfigError(f"block ({i}, {j}) outside {grid.I} x {grid.J} grid")
    if grid.n_rows != data.n_rows or grid.n_cols != data.n_cols:
        raise DataError("grid dimensions do not match data")
    mask = (grid.row_group()[data.rows] == i) & (grid.col_group()[data.cols] == j)
    local = SparseRatings(
        n_rows=int(grid.row_group_sizes()[i]),
        n_cols=int(grid.col_group_sizes()[j]),
        rows=grid.row_local()[data.rows[mask]],
        cols=grid.col_local()[data.cols[mask]],
        values=data.values[mask],
        scale_min=data.scale_min, scale_max=data.scale_max,
    )
    return Block(i=i, j=j, ratings=local,
                 row_map=grid.rows_of_group(i).copy(),
                 col_map=grid.cols_of_group(j).copy())


def save_grid(grid: BlockGrid, path) -> None:
    """Persist parameters plus materialized boundaries for audit."""
    doc = {
        "I": grid.I, "J": grid.J,
        "seed": grid.seed, "strategy": grid.strategy,
        "n_rows": grid.n_rows, "n_cols": grid.n_cols,
        "row_bounds": grid.row_bounds.tolist(),
        "col_bounds": grid.col_bounds.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_grid(path) -> BlockGrid:
    """Regenerate a grid from its stored parameters, verifying the audit trail."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    shape = _Shape(doc["n_rows"], doc["n_cols"])
    grid = build_grid(shape, doc["I"], doc["J"], doc["strategy"], doc["seed"])
    if grid.row_bounds.tolist() != doc["row_bounds"] or grid.col_bounds.tolist() != doc["col_bounds"]:
        raise DataError(f"stored boundaries in {path} do not match regenerated grid")
    return grid


class _Shape:
    """Duck-typed stand-in for SparseRatings when only dimensions matter."""

    def __init__(self, n_rows, n_cols):
        self.n_rows = n_rows
        self.n_cols = n_cols
