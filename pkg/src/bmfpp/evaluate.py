"""RMSE metrics over held-out ratings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SparseRatings
from .errors import CoverageError, DataError


@dataclass(frozen=True)
class MetricReport:
    """RMSE over an evaluation set, with an optional per-block breakdown."""

    rmse: float
    n_cells: int
    per_block: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "n_cells": self.n_cells,
            "per_block": {f"{i},{j}": v for (i, j), v in sorted(self.per_block.items())},
        }


def rmse(pred_rows: np.ndarray, pred_cols: np.ndarray, pred_values: np.ndarray,
         truth: SparseRatings, block_of: np.ndarray | None = None) -> MetricReport:
    """Root-mean-square error of predictions against the truth set.

    Every predicted cell must exist in the truth set and every truth cell
    must be predicted exactly once; missing cells raise CoverageError
    listing examples. `block_of`, when given, assigns each prediction to a
    block (i, j) for the per-block breakdown.
    """
    pred_rows = np.asarray(pred_rows, dtype=np.int64)
    pred_cols = np.asarray(pred_cols, dtype=np.int64)
    pred_values = np.asarray(pred_values, dtype=float)
    if truth.nnz == 0:
        raise DataError("truth set is empty")
    width = np.int64(max(truth.n_cols, 1))
    truth_keys = truth.rows * width + truth.cols
    pred_keys = pred_rows * width + pred_cols
    order_truth = np.argsort(truth_keys, kind="stable")
    order_pred = np.argsort(pred_keys, kind="stable")
    if pred_keys.size != truth_keys.size or not np.array_equal(
            pred_keys[order_pred], truth_keys[order_truth]):
        missing = np.setdiff1d(truth_keys, pred_keys)
        extra = np.setdiff1d(pred_keys, truth_keys)
        parts = []
        if missing.size:
            cells = [(int(k // width), int(k % width)) for k in missing[:5]]
            parts.append(f"{missing.size} truth cells unpredicted, e.g. {cells}")
        if extra.size:
            cells = [(int(k // width), int(k % width)) for k in extra[:5]]
            parts.append(f"{extra.size} predictions outside truth, e.g. {cells}")
        if not parts:
            parts.append("duplicate predictions for some cells")
        raise CoverageError("; ".join(parts))

    errors = pred_values[order_pred] - truth.values[order_truth]
    total = float(np.sqrt(np.mean(errors ** 2)))
    per_block = {}
    if block_of is not None:
        tags = np.asarray(block_of)[order_pred]
        for tag in np.unique(tags, axis=0):
            sel = np.all(tags == tag, axis=1) if tags.ndim > 1 else tags == tag
            key = tuple(int(x) for x in np.atleast_1d(tag))
            per_block[key] = {
                "rmse": float(np.sqrt(np.mean(errors[sel] ** 2))),
                "n_cells": int(sel.sum()),
            }
    return MetricReport(rmse=total, n_cells=int(truth.nnz), per_block=per_block)
