"""Gaussian row summaries, natural-parameter algebra, and prediction.

Natural parameters are (precision P, shift h = P @ mean). In this
representation products and quotients of Gaussian densities are entrywise
additions and subtractions, which is what the block-posterior aggregation
needs: multiply per-block posteriors together, then divide away the prior
factors that were counted more than once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import AggregationError
from .samplers import cholesky

DEFAULT_RIDGE_EPS = 1e-6
DEFAULT_JITTER = 1e-8
JITTER_CAP_FRACTION = 1e-2


@dataclass(frozen=True, eq=False)
class NaturalGaussian:
    """Gaussian in natural parameters; P must be PD when used as a prior."""

    P: np.ndarray
    h: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianRowSummary:
    """Moment-matched Gaussian for one latent row."""

    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int


@dataclass(frozen=True, eq=False)
class RowSummaries:
    """Stacked per-row summaries for one side of a block (rows x K)."""

    means: np.ndarray        # (rows, K)
    covariances: np.ndarray  # (rows, K, K)
    n_samples: int

    @property
    def n_rows(self) -> int:
        return int(self.means.shape[0])

    @property
    def k(self) -> int:
        return int(self.means.shape[1])

    def row(self, n: int) -> GaussianRowSummary:
        return GaussianRowSummary(self.means[n], self.covariances[n], self.n_samples)


def summarize_rows(sum_x: np.ndarray, sum_xxt: np.ndarray, n: int,
                   ridge_eps: float = DEFAULT_RIDGE_EPS,
                   diagonal: bool = False,
                   within: np.ndarray | None = None) -> RowSummaries:
    """Moment-match retained sweep samples accumulated as sums.

    `sum_x` is (rows, K), `sum_xxt` is (rows, K, K) of per-sweep outer
    products. Covariance uses the n-1 denominator (zero matrix when n == 1)
    plus a ridge of ridge_eps * (trace/K) with floor ridge_eps when the trace
    vanishes, so the result is always invertible.

    For Rao-Blackwellized summaries the per-sweep quantities are conditional
    means and `within` carries the summed conditional covariances, whose
    average is added to the between-sweep part.
    """
    if n < 1:
        raise ValueError("need at least one retained sample")
    rows, k = sum_x.shape
    means = sum_x / n
    if n == 1:
        cov = np.zeros((rows, k, k))
    else:
        outer = means[:, :, None] * means[:, None, :]
        cov = (sum_xxt - n * outer) / (n - 1)
    if within is not None:
        cov = cov + within / n
    cov = (cov + np.transpose(cov, (0, 2, 1))) / 2.0
    if diagonal:
        cov = cov * np.eye(k)[None, :, :]
    traces = np.trace(cov, axis1=1, axis2=2)
    ridge = ridge_eps * np.where(traces > 0.0, traces / k, 1.0)
    cov = cov + ridge[:, None, None] * np.eye(k)[None, :, :]
    return RowSummaries(means=means, covariances=cov, n_samples=int(n))


def summarize_samples(samples: np.ndarray, ridge_eps: float = DEFAULT_RIDGE_EPS,
                      diagonal: bool = False) -> RowSummaries:
    """summarize_rows for explicit per-sweep samples, shape (n, rows, K)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    sum_x = samples.sum(axis=0)
    sum_xxt = np.einsum("nri,nrj->rij", samples, samples)
    return summarize_rows(sum_x, sum_xxt, n, ridge_eps=ridge_eps, diagonal=diagonal)


def to_natural(summary: GaussianRowSummary) -> NaturalGaussian:
    """Convert moment form to natural parameters via a Cholesky solve."""
    chol = cholesky(summary.covariance)
    k = summary.mean.shape[0]
    p = cho_solve((chol, True), np.eye(k), check_finite=False)
    p = (p + p.T) / 2.0
    return NaturalGaussian(P=p, h=p @ summary.mean)


def to_moment(ng: NaturalGaussian, n_samples: int = 1) -> GaussianRowSummary:
    """Invert to_natural; requires PD precision."""
    chol = cholesky(ng.P)
    k = ng.h.shape[0]
    cov = cho_solve((chol, True), np.eye(k), check_finite=False)
    cov = (cov + cov.T) / 2.0
    mean = cho_solve((chol, True), ng.h, check_finite=False)
    return GaussianRowSummary(mean=mean, covariance=cov, n_samples=n_samples)


def batch_to_natural(summaries: RowSummaries) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (P, h) arrays, shapes (rows, K, K) and (rows, K)."""
    p = np.linalg.inv(summaries.covariances)
    p = (p + np.transpose(p, (0, 2, 1))) / 2.0
    h = np.einsum("rij,rj->ri", p, summaries.means)
    return p, h


def gaussian_multiply(a: NaturalGaussian, b: NaturalGaussian) -> NaturalGaussian:
    return NaturalGaussian(P=a.P + b.P, h=a.h + b.h)


def gaussian_divide(num: NaturalGaussian, den: NaturalGaussian,
                    jitter: float = DEFAULT_JITTER, row: int | None = None) -> NaturalGaussian:
    """Quotient of Gaussian densities in natural parameters.

    If the resulting precision is not PD, escalate a jitter ridge by factors
    of 10 up to JITTER_CAP_FRACTION * max|P|; beyond that the division is
    considered irrecoverable.
    """
    p = num.P - den.P
    h = num.h - den.h
    if _is_pd(p):
        return NaturalGaussian(P=p, h=h)
    cap = JITTER_CAP_FRACTION * max(np.abs(p).max(), 0.0)
    eye = np.eye(p.shape[0])
    j = jitter
    while j <= cap:
        if _is_pd(p + j * eye):
            return NaturalGaussian(P=p + j * eye, h=h)
        j *= 10.0
    where = "" if row is None else f" for row {row}"
    raise AggregationError(
        f"posterior division produced a non-PD precision{where} "
        f"(jitter escalation to {cap:.3e} failed)"
    )


def _is_pd(p: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(p)
        return True
    except np.linalg.LinAlgError:
        return False


def aggregate_row_posteriors(block_posteriors: list[NaturalGaussian],
                             propagated_prior: NaturalGaussian,
                             times_counted: int,
                             jitter: float = DEFAULT_JITTER,
                             row: int | None = None,
                             n_samples: int = 1) -> GaussianRowSummary:
    """Combine one row's per-block posteriors into a single Gaussian.

    Multiplies all L block posteriors and divides away the propagated prior
    counted times_counted = L - 1 extra times. With L == 1 the single
    posterior is returned unchanged.
    """
    ell = len(block_posteriors)
    if ell < 1:
        raise ValueError("need at least one block posterior")
    if times_counted != ell - 1:
        raise ValueError(f"times_counted must be L-1 = {ell - 1}, got {times_counted}")
    if ell == 1:
        return to_moment(block_posteriors[0], n_samples=n_samples)
    total = block_posteriors[0]
    for ng in block_posteriors[1:]:
        total = gaussian_multiply(total, ng)
    correction = NaturalGaussian(P=times_counted * propagated_prior.P,
                                 h=times_counted * propagated_prior.h)
    combined = gaussian_divide(total, correction, jitter=jitter, row=row)
    return to_moment(combined, n_samples=n_samples)


def predict_cells(pred_mean: np.ndarray, pred_m2: np.ndarray, tau: float,
                  scale_min: float, scale_max: float, clamp: bool,
                  offset: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Turn per-cell prediction accumulators into (mean, predictive variance).

    `pred_mean` / `pred_m2` are the running mean and running second moment of
    per-sample dot products. The predictive variance adds the observation
    noise 1/tau. Clamping clips the mean into the rating scale after
    averaging and offsetting.
    """
    mean = pred_mean + offset
    variance = pred_m2 - pred_mean ** 2 + 1.0 / tau
    variance = np.maximum(variance, 1.0 / tau)
    if clamp:
        mean = np.clip(mean, scale_min, scale_max)
    return mean, variance
