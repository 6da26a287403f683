"""Posterior checkpoint artifact: aggregated row summaries plus the
train-time test-cell predictions, with provenance metadata."""

from __future__ import annotations

import json
import os

import numpy as np

from .data import SparseRatings
from .errors import DataError
from .gaussians import RowSummaries
from .scheduler import ExecutionResult


def _pack_tril(covs: np.ndarray) -> np.ndarray:
    k = covs.shape[1]
    ii, jj = np.tril_indices(k)
    return covs[:, ii, jj]


def _unpack_tril(packed: np.ndarray, k: int) -> np.ndarray:
    ii, jj = np.tril_indices(k)
    covs = np.zeros((packed.shape[0], k, k))
    covs[:, ii, jj] = packed
    covs[:, jj, ii] = packed
    return covs


def save_checkpoint(path, result: ExecutionResult, meta: dict) -> None:
    """Atomically write the posterior checkpoint (.npz).

    Row summaries are stored as (row index, mean, covariance lower triangle);
    `meta` must carry at least config_hash and seed.
    """
    k = result.u.k
    arrays = {
        "u_index": np.arange(result.u.n_rows, dtype=np.int64),
        "u_means": result.u.means,
        "u_cov_tril": _pack_tril(result.u.covariances),
        "v_index": np.arange(result.v.n_rows, dtype=np.int64),
        "v_means": result.v.means,
        "v_cov_tril": _pack_tril(result.v.covariances),
        "n_samples": np.array([result.u.n_samples], dtype=np.int64),
        "k": np.array([k], dtype=np.int64),
        "offset": np.array([result.offset]),
        "test_rows": result.test_rows,
        "test_cols": result.test_cols,
        "test_pred_mean": result.test_pred_mean,
        "test_pred_var": result.test_pred_var,
        "test_pred_mean_aggregated": result.test_pred_mean_aggregated,
        "test_pred_var_aggregated": result.test_pred_var_aggregated,
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                              dtype=np.uint8),
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


class Checkpoint:
    """Loaded posterior checkpoint."""

    def __init__(self, u: RowSummaries, v: RowSummaries, offset: float,
                 test_rows, test_cols, test_pred_mean, test_pred_var,
                 test_pred_mean_aggregated, test_pred_var_aggregated, meta: dict):
        self.u = u
        self.v = v
        self.offset = offset
        self.test_rows = test_rows
        self.test_cols = test_cols
        self.test_pred_mean = test_pred_mean
        self.test_pred_var = test_pred_var
        self.test_pred_mean_aggregated = test_pred_mean_aggregated
        self.test_pred_var_aggregated = test_pred_var_aggregated
        self.meta = meta

    def matches(self, data: SparseRatings) -> bool:
        return self.u.n_rows == data.n_rows and self.v.n_rows == data.n_cols

    def stored_prediction_lookup(self) -> dict:
        """(row, col) -> index into the stored test predictions."""
        return {(int(r), int(c)): idx
                for idx, (r, c) in enumerate(zip(self.test_rows, self.test_cols))}


def load_checkpoint(path) -> Checkpoint:
    try:
        npz = np.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    with npz:
        k = int(npz["k"][0])
        n_samples = int(npz["n_samples"][0])
        u = RowSummaries(npz["u_means"], _unpack_tril(npz["u_cov_tril"], k), n_samples)
        v = RowSummaries(npz["v_means"], _unpack_tril(npz["v_cov_tril"], k), n_samples)
        meta = json.loads(npz["meta"].tobytes().decode("utf-8"))
        return Checkpoint(
            u=u, v=v, offset=float(npz["offset"][0]),
            test_rows=npz["test_rows"], test_cols=npz["test_cols"],
            test_pred_mean=npz["test_pred_mean"], test_pred_var=npz["test_pred_var"],
            test_pred_mean_aggregated=npz["test_pred_mean_aggregated"],
            test_pred_var_aggregated=npz["test_pred_var_aggregated"],
            meta=meta,
        )
