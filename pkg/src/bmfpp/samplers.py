"""Low-level distribution samplers and the Cholesky factorization they share.

All samplers are parameterized by precision matrices (not covariances),
because Gibbs conditionals naturally produce precisions. Draws never form an
explicit matrix inverse; they go through a Cholesky factor and triangular
solves.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CholeskyError
from .rng import RngStream

SYM_RTOL = 1e-12


def check_symmetric(a: np.ndarray, rtol: float = SYM_RTOL) -> None:
    """Raise ValueError if `a` is not square and symmetric within rtol."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with a = L @ L.T.

    Raises CholeskyError identifying the failing pivot index when `a` is not
    positive definite.
    """
    a = np.asarray(a, dtype=float)
    check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise CholeskyError(_failing_pivot(a)) from None


def _failing_pivot(a: np.ndarray) -> int:
    # slow reference elimination, only run to produce a good error message
    k = a.shape[0]
    m = a.astype(float).copy()
    for i in range(k):
        if m[i, i] <= 0.0 or not np.isfinite(m[i, i]):
            return i
        m[i:, i] /= np.sqrt(m[i, i])
        if i + 1 < k:
            m[i + 1:, i + 1:] -= np.outer(m[i + 1:, i], m[i + 1:, i])
    return k - 1


def sample_mvn(mean: np.ndarray, precision: np.ndarray, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, precision^-1).

    With size=None returns one K-vector; with size=n returns an (n, K) array
    of independent draws from the same distribution.
    """
    mean = np.asarray(mean, dtype=float)
    k = mean.shape[0]
    chol_p = cholesky(precision)
    if size is None:
        z = rng.standard_normal(k)
        return mean + solve_triangular(chol_p.T, z, lower=False, check_finite=False)
    z = rng.standard_normal((k, size))
    draws = solve_triangular(chol_p.T, z, lower=False, check_finite=False)
    return mean[None, :] + draws.T


def sample_wishart(scale: np.ndarray, dof: float, rng: RngStream) -> np.ndarray:
    """Draw a Wishart(scale, dof) matrix via the Bartlett decomposition.

    Requires dof >= K. The result is symmetric positive definite and has
    expectation dof * scale.
    """
    scale = np.asarray(scale, dtype=float)
    k = scale.shape[0]
    if dof < k:
        raise ValueError(f"Wishart dof must be >= dimension ({k}), got {dof}")
    chol_s = cholesky(scale)
    bartlett = np.zeros((k, k))
    diag = np.sqrt(rng.chisquare(dof - np.arange(k)))
    bartlett[np.diag_indices(k)] = diag
    if k > 1:
        bartlett[np.tril_indices(k, -1)] = rng.standard_normal(k * (k - 1) // 2)
    lb = chol_s @ bartlett
    w = lb @ lb.T
    return (w + w.T) / 2.0
