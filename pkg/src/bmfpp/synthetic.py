"""Synthetic low-rank ratings for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .data import SparseRatings
from .errors import ConfigError


def generate_synthetic(n_rows: int, n_cols: int, k_true: int, noise_sd: float,
                       density: float, seed: int):
    """Low-rank matrix with Gaussian noise, observed at the given density.

    Factor entries are i.i.d. N(0, 1/sqrt(k_true)) so the noiseless products
    have unit variance; observed cells are sampled without replacement and
    values are left unclamped. Returns (ratings, u_true, v_true).
    """
    if not (0.0 < density <= 1.0):
        raise ConfigError(f"density must be in (0, 1], got {density}")
    if noise_sd < 0:
        raise ConfigError(f"noise_sd must be >= 0, got {noise_sd}")
    n_cells = int(round(density * n_rows * n_cols))
    if n_cells == 0:
        raise ConfigError(f"density {density} yields zero observed cells")
    rng = np.random.default_rng(seed)
    scale = (1.0 / np.sqrt(k_true)) ** 0.5
    u = rng.standard_normal((n_rows, k_true)) * scale
    v = rng.standard_normal((n_cols, k_true)) * scale
    flat = rng.choice(n_rows * n_cols, size=n_cells, replace=False)
    flat.sort()
    rows = flat // n_cols
    cols = flat % n_cols
    values = np.einsum("qk,qk->q", u[rows], v[cols])
    if noise_sd > 0:
        values = values + noise_sd * rng.standard_normal(n_cells)
    return SparseRatings(n_rows, n_cols, rows, cols, values), u, v
