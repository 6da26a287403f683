"""Gibbs sampler for Bayesian matrix factorization on one block.

The model is R ~ prod N(r_nd | u_n . v_d, 1/tau) over observed cells, with
Gaussian priors on the rows of U and V. A side's prior is either
hierarchical (shared Normal-Wishart-distributed mean and precision,
resampled every sweep) or propagated (a fixed per-row Gaussian carried over
from an earlier block's posterior).

One sweep: resample the U-side hyperparameters (hierarchical sides only),
then every row of U against the current V, then the same two steps for V
against the updated U. Rows within a half-sweep are mutually independent,
so they may be computed concurrently; the step boundaries are barriers.
Every random draw comes from a stream keyed by (phase, block, purpose, row,
sweep), which makes chains bitwise reproducible for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .config import ModelConfig
from .data import SparseRatings
from .errors import CholeskyError, DataError, NumericalError
from .gaussians import RowSummaries, summarize_rows
from .rng import (
    PURPOSE_U_HYPER, PURPOSE_U_HYPER_INIT, PURPOSE_U_INIT, PURPOSE_U_ROW,
    PURPOSE_V_HYPER, PURPOSE_V_HYPER_INIT, PURPOSE_V_INIT, PURPOSE_V_ROW,
    RngStream, derive_stream,
)
from .samplers import _failing_pivot, sample_mvn, sample_wishart

HIERARCHICAL = "hierarchical"
PROPAGATED = "propagated"

MIN_ROWS_PER_THREAD = 32


@dataclass(frozen=True)
class StreamContext:
    """Addresses the random streams of one block chain."""

    seed: int
    phase: int = 0
    i: int = 0
    j: int = 0

    def stream(self, purpose: int, row: int = 0, sweep: int = 0) -> RngStream:
        return derive_stream(self.seed, (self.phase, self.i, self.j, purpose, row, sweep))


@dataclass(frozen=True, eq=False)
class SidePrior:
    """Prior for one side of the factorization.

    Hierarchical mode carries no arrays; propagated mode carries one natural
    Gaussian (precision, shift) per row of the side.
    """

    mode: str
    P: np.ndarray | None = None   # (rows, K, K)
    h: np.ndarray | None = None   # (rows, K)

    def __post_init__(self):
        if self.mode not in (HIERARCHICAL, PROPAGATED):
            raise ValueError(f"unknown prior mode {self.mode!r}")
        if self.mode == PROPAGATED:
            if self.P is None or self.h is None:
                raise ValueError("propagated prior needs per-row (P, h)")
            if self.P.shape[:1] != self.h.shape[:1] or self.P.shape[1] != self.h.shape[1]:
                raise ValueError("propagated (P, h) shapes disagree")

    @classmethod
    def hierarchical(cls) -> "SidePrior":
        return cls(mode=HIERARCHICAL)

    @classmethod
    def propagated(cls, P: np.ndarray, h: np.ndarray) -> "SidePrior":
        return cls(mode=PROPAGATED, P=np.asarray(P, dtype=float), h=np.asarray(h, dtype=float))


@dataclass(eq=False)
class LatentBlockState:
    """Mutable factor matrices and hyperparameters of one running chain."""

    U: np.ndarray
    V: np.ndarray
    hyper_u: tuple[np.ndarray, np.ndarray] | None  # (mu, Lambda) when hierarchical
    hyper_v: tuple[np.ndarray, np.ndarray] | None
    sweep: int = 0


class BlockAdjacency:
    """CSR-style row and column adjacency of one block's observed cells."""

    def __init__(self, block: SparseRatings):
        self.n_rows = block.n_rows
        self.n_cols = block.n_cols
        self.nnz = block.nnz
        order = np.argsort(block.rows * np.int64(max(block.n_cols, 1)) + block.cols)
        self.row_ptr = np.zeros(block.n_rows + 1, dtype=np.int64)
        np.add.at(self.row_ptr, block.rows + 1, 1)
        np.cumsum(self.row_ptr, out=self.row_ptr)
        self.row_cols = block.cols[order]
        self.row_vals = block.values[order]
        orderc = np.argsort(block.cols * np.int64(max(block.n_rows, 1)) + block.rows)
        self.col_ptr = np.zeros(block.n_cols + 1, dtype=np.int64)
        np.add.at(self.col_ptr, block.cols + 1, 1)
        np.cumsum(self.col_ptr, out=self.col_ptr)
        self.col_rows = block.rows[orderc]
        self.col_vals = block.values[orderc]


@dataclass(eq=False)
class ChainOutput:
    """Everything one block chain produces."""

    u: RowSummaries
    v: RowSummaries
    query_rows: np.ndarray
    query_cols: np.ndarray
    pred_mean: np.ndarray   # running mean of per-sample dot products
    pred_m2: np.ndarray     # running second moment of per-sample dot products
    n_samples: int
    sweep_seconds: np.ndarray
    row_updates: int


def _conditional(prior_p, prior_h, tau, factors, values):
    """Cholesky factor and mean of one row's Gaussian conditional."""
    if values.shape[0]:
        precision = prior_p + tau * (factors.T @ factors)
        shift = prior_h + tau * (factors.T @ values)
    else:
        precision = prior_p
        shift = prior_h
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise CholeskyError(_failing_pivot(precision)) from None
    half = solve_triangular(chol, shift, lower=True, check_finite=False)
    mean = solve_triangular(chol.T, half, lower=False, check_finite=False)
    return chol, mean


def sample_row(prior_p: np.ndarray, prior_h: np.ndarray, tau: float,
               factors: np.ndarray, values: np.ndarray, rng: RngStream,
               size: int | None = None) -> np.ndarray:
    """Draw a latent row from its Gaussian conditional.

    The conditional has precision prior_p + tau * factors^T factors and shift
    prior_h + tau * factors^T values; the draw goes through a Cholesky factor
    and triangular solves (no explicit inverse). With an empty ratings list
    this is exactly a draw from the prior.
    """
    k = prior_h.shape[0]
    chol, mean = _conditional(prior_p, prior_h, tau, factors, values)
    if size is None:
        noise = solve_triangular(chol.T, rng.standard_normal(k), lower=False, check_finite=False)
        return mean + noise
    noise = solve_triangular(chol.T, rng.standard_normal((k, size)), lower=False, check_finite=False)
    return mean[None, :] + noise.T


def nw_posterior_params(rows: np.ndarray, cfg: ModelConfig):
    """Conjugate Normal-Wishart update for n stacked K-vectors.

    Returns (mu_star, beta_star, w_star, nu_star). With n == 0 this is the
    prior itself.
    """
    n = rows.shape[0]
    mu0, beta0, nu0 = cfg.mu0, cfg.nw_beta0, cfg.nu0
    w0_inv = np.linalg.inv(cfg.w0)
    if n == 0:
        return mu0.copy(), beta0, cfg.w0.copy(), nu0
    xbar = rows.mean(axis=0)
    centered = rows - xbar
    scatter = centered.T @ centered
    diff = xbar - mu0
    w_star_inv = w0_inv + scatter + (beta0 * n / (beta0 + n)) * np.outer(diff, diff)
    w_star = np.linalg.inv(w_star_inv)
    w_star = (w_star + w_star.T) / 2.0
    mu_star = (beta0 * mu0 + n * xbar) / (beta0 + n)
    return mu_star, beta0 + n, w_star, nu0 + n


def sample_hyperparams(rows: np.ndarray, cfg: ModelConfig, rng: RngStream):
    """Draw (mu, Lambda) from the Normal-Wishart conditional given the rows.

    Lambda is drawn first (Wishart), then mu given Lambda; both consume the
    same stream.
    """
    mu_star, beta_star, w_star, nu_star = nw_posterior_params(rows, cfg)
    lam = sample_wishart(w_star, nu_star, rng)
    mu = sample_mvn(mu_star, beta_star * lam, rng)
    return mu, lam


def _shared_prior(hyper: tuple[np.ndarray, np.ndarray]):
    mu, lam = hyper
    return lam, lam @ mu


def _update_rows(out: np.ndarray, other: np.ndarray, ptr, idx, vals,
                 prior: SidePrior, shared, tau: float, ctx: StreamContext,
                 purpose: int, sweep: int, lo: int, hi: int,
                 capture=None) -> None:
    """Resample rows [lo, hi) of one side in place.

    `capture`, when given, is a (means, covariances) pair filled with each
    row's conditional moments for Rao-Blackwellized summaries.
    """
    k = out.shape[1]
    eye = np.eye(k)
    for n in range(lo, hi):
        if prior.mode == PROPAGATED:
            prior_p, prior_h = prior.P[n], prior.h[n]
        else:
            prior_p, prior_h = shared
        sl = slice(ptr[n], ptr[n + 1])
        chol, mean = _conditional(prior_p, prior_h, tau, other[idx[sl]], vals[sl])
        rng = ctx.stream(purpose, n, sweep)
        noise = solve_triangular(chol.T, rng.standard_normal(k), lower=False,
                                 check_finite=False)
        out[n] = mean + noise
        if capture is not None:
            capture[0][n] = mean
            inv_half = solve_triangular(chol, eye, lower=True, check_finite=False)
            capture[1][n] = inv_half.T @ inv_half


def _update_side(out, other, ptr, idx, vals, prior, shared, tau, ctx,
                 purpose, sweep, pool: ThreadPoolExecutor | None, n_threads: int,
                 capture=None) -> None:
    rows = out.shape[0]
    if pool is None or n_threads <= 1 or rows < 2 * MIN_ROWS_PER_THREAD:
        _update_rows(out, other, ptr, idx, vals, prior, shared, tau, ctx,
                     purpose, sweep, 0, rows, capture)
        return
    chunks = min(n_threads, max(1, rows // MIN_ROWS_PER_THREAD))
    bounds = np.linspace(0, rows, chunks + 1, dtype=int)
    futures = [
        pool.submit(_update_rows, out, other, ptr, idx, vals, prior, shared,
                    tau, ctx, purpose, sweep, int(bounds[c]), int(bounds[c + 1]), capture)
        for c in range(chunks)
    ]
    for fut in futures:
        fut.result()


def gibbs_sweep(state: LatentBlockState, adj: BlockAdjacency,
                priors: tuple[SidePrior, SidePrior], cfg: ModelConfig,
                ctx: StreamContext, pool: ThreadPoolExecutor | None = None,
                n_threads: int = 1, tau: float | None = None,
                capture=None) -> LatentBlockState:
    """One full sweep over both sides; mutates and returns `state`.

    `tau` overrides the likelihood precision for this sweep (used by the
    burn-in annealing ramp); conditionals otherwise use cfg.tau. `capture`
    is an optional (u_means, u_covs, v_means, v_covs) tuple receiving every
    row's conditional moments for Rao-Blackwellized summaries.
    """
    if state.U.shape[0] != adj.n_rows or state.V.shape[0] != adj.n_cols:
        raise DataError("state dimensions do not match block")
    tau_t = cfg.tau if tau is None else tau
    prior_u, prior_v = priors
    sweep = state.sweep
    shared_u = shared_v = None
    if prior_u.mode == HIERARCHICAL:
        state.hyper_u = sample_hyperparams(state.U, cfg, ctx.stream(PURPOSE_U_HYPER, 0, sweep))
        shared_u = _shared_prior(state.hyper_u)
    _update_side(state.U, state.V, adj.row_ptr, adj.row_cols, adj.row_vals,
                 prior_u, shared_u, tau_t, ctx, PURPOSE_U_ROW, sweep, pool, n_threads,
                 capture=None if capture is None else (capture[0], capture[1]))
    if prior_v.mode == HIERARCHICAL:
        state.hyper_v = sample_hyperparams(state.V, cfg, ctx.stream(PURPOSE_V_HYPER, 0, sweep))
        shared_v = _shared_prior(state.hyper_v)
    _update_side(state.V, state.U, adj.col_ptr, adj.col_rows, adj.col_vals,
                 prior_v, shared_v, tau_t, ctx, PURPOSE_V_ROW, sweep, pool, n_threads,
                 capture=None if capture is None else (capture[2], capture[3]))
    state.sweep += 1
    return state


TAU_ANNEAL_START = 1.0 / 16.0


def _tau_schedule(cfg: ModelConfig) -> np.ndarray:
    """Per-sweep likelihood precision; a geometric ramp over the first half
    of burn-in when annealing is on, flat cfg.tau everywhere else."""
    taus = np.full(cfg.sweeps, cfg.tau)
    ramp = cfg.burn_in // 2
    if cfg.tau_anneal and ramp > 0:
        exponents = 1.0 - np.arange(ramp) / ramp
        taus[:ramp] = cfg.tau * TAU_ANNEAL_START ** exponents
    return taus


def init_state(block: SparseRatings, priors: tuple[SidePrior, SidePrior],
               cfg: ModelConfig, ctx: StreamContext) -> LatentBlockState:
    """Factor entries i.i.d. N(0, 1/K); hierarchical hyperparameters from the prior."""
    k = cfg.k
    u = ctx.stream(PURPOSE_U_INIT).standard_normal((block.n_rows, k)) / np.sqrt(k)
    v = ctx.stream(PURPOSE_V_INIT).standard_normal((block.n_cols, k)) / np.sqrt(k)
    hyper_u = hyper_v = None
    if priors[0].mode == HIERARCHICAL:
        rng = ctx.stream(PURPOSE_U_HYPER_INIT)
        lam = sample_wishart(cfg.w0, cfg.nu0, rng)
        hyper_u = (sample_mvn(cfg.mu0, cfg.nw_beta0 * lam, rng), lam)
    if priors[1].mode == HIERARCHICAL:
        rng = ctx.stream(PURPOSE_V_HYPER_INIT)
        lam = sample_wishart(cfg.w0, cfg.nu0, rng)
        hyper_v = (sample_mvn(cfg.mu0, cfg.nw_beta0 * lam, rng), lam)
    return LatentBlockState(U=u, V=v, hyper_u=hyper_u, hyper_v=hyper_v)


def run_chain(block: SparseRatings, priors: tuple[SidePrior, SidePrior],
              query_cells: tuple[np.ndarray, np.ndarray] | None,
              cfg: ModelConfig, ctx: StreamContext, n_threads: int = 1) -> ChainOutput:
    """Run one block's chain: burn-in, then moment-match the retained sweeps.

    query_cells are (rows, cols) local index arrays; each retained sweep
    contributes one per-sample dot product to the prediction accumulators.

    The likelihood only constrains the product U V^T, so chains wander
    through the latent gauge group (rotations plus scale exchange between
    the sides); moment-matching the raw trajectory would smear the summaries
    with that drift. Retained samples are therefore gauge-fixed before
    accumulation: both sides are rotated jointly onto the first retained
    sweep (with per-dimension scale balancing first when both sides are
    hierarchical and the scale direction is unpinned). A chain seeded with
    propagated priors sits in its upstream basis from sweep 0, so its first
    retained sweep keeps downstream summaries in the basis the anchor block
    established. Blocks with no observations skip gauge fixing: their draws
    are exact prior draws and there is nothing to drift against. Prediction
    accumulators always use the raw samples; u . v is invariant under the
    joint transform either way.
    """
    _check_prior_shapes(block, priors, cfg.k)
    adj = BlockAdjacency(block)
    state = init_state(block, priors, cfg, ctx)
    if query_cells is None:
        q_rows = np.zeros(0, dtype=np.int64)
        q_cols = np.zeros(0, dtype=np.int64)
    else:
        q_rows = np.asarray(query_cells[0], dtype=np.int64)
        q_cols = np.asarray(query_cells[1], dtype=np.int64)

    k = cfg.k
    sum_u = np.zeros((block.n_rows, k))
    sum_uut = np.zeros((block.n_rows, k, k))
    sum_v = np.zeros((block.n_cols, k))
    sum_vvt = np.zeros((block.n_cols, k, k))
    within_u = np.zeros((block.n_rows, k, k))
    within_v = np.zeros((block.n_cols, k, k))
    pred_sum = np.zeros(q_rows.shape[0])
    pred_sq = np.zeros(q_rows.shape[0])
    sweep_seconds = np.zeros(cfg.sweeps)
    taus = _tau_schedule(cfg)
    gauge_fix = block.nnz > 0
    balance = all(p.mode == HIERARCHICAL for p in priors)
    gauge_ref = None
    capture = None
    if cfg.rb_summaries:
        capture = (np.empty((block.n_rows, k)), np.empty((block.n_rows, k, k)),
                   np.empty((block.n_cols, k)), np.empty((block.n_cols, k, k)))

    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        for sweep in range(cfg.sweeps):
            t0 = time.perf_counter()
            retained = sweep >= cfg.burn_in
            gibbs_sweep(state, adj, priors, cfg, ctx, pool=pool, n_threads=n_threads,
                        tau=float(taus[sweep]),
                        capture=capture if retained else None)
            if retained:
                if q_rows.size:
                    preds = np.einsum("qk,qk->q", state.U[q_rows], state.V[q_cols])
                    pred_sum += preds
                    pred_sq += preds ** 2
                u_s, v_s = (capture[0], capture[2]) if cfg.rb_summaries else (state.U, state.V)
                if gauge_fix:
                    # gauge transform pair: U <- U diag(1/s) Q, V <- V diag(s) Q
                    scale = _balance_factors(state.U, state.V) if balance else None
                    if scale is None:
                        stacked = np.vstack((state.U, state.V))
                        m_u = m_v = None
                    else:
                        stacked = np.vstack((state.U / scale, state.V * scale))
                    if gauge_ref is None:
                        gauge_ref = stacked.copy()
                    rot = _procrustes(stacked, gauge_ref)
                    m_u = rot if scale is None else rot / scale[:, None]
                    m_v = rot if scale is None else rot * scale[:, None]
                    u_s = u_s @ m_u
                    v_s = v_s @ m_v
                    if cfg.rb_summaries:
                        within_u += np.einsum("lk,rlm,mn->rkn", m_u, capture[1], m_u)
                        within_v += np.einsum("lk,rlm,mn->rkn", m_v, capture[3], m_v)
                elif cfg.rb_summaries:
                    within_u += capture[1]
                    within_v += capture[3]
                sum_u += u_s
                sum_uut += u_s[:, :, None] * u_s[:, None, :]
                sum_v += v_s
                sum_vvt += v_s[:, :, None] * v_s[:, None, :]
            sweep_seconds[sweep] = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    n = cfg.samples
    u_sum = summarize_rows(sum_u, sum_uut, n, ridge_eps=cfg.ridge_eps,
                           diagonal=cfg.diag_covariance, within=within_u if cfg.rb_summaries else None)
    v_sum = summarize_rows(sum_v, sum_vvt, n, ridge_eps=cfg.ridge_eps,
                           diagonal=cfg.diag_covariance, within=within_v if cfg.rb_summaries else None)
    out = ChainOutput(
        u=u_sum, v=v_sum,
        query_rows=q_rows, query_cols=q_cols,
        pred_mean=pred_sum / n, pred_m2=pred_sq / n,
        n_samples=n, sweep_seconds=sweep_seconds,
        row_updates=cfg.sweeps * (block.n_rows + block.n_cols),
    )
    _check_finite(out)
    return out


def _procrustes(w: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Orthogonal Q minimizing ||w Q - ref||_F."""
    left, _, right = np.linalg.svd(w.T @ ref)
    return left @ right


def _balance_factors(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-dimension scales s such that u / s and v * s carry equal column
    norms.

    The likelihood only sees u . v, so (u / s, v * s) is the same model;
    balancing removes the scale-exchange direction of the gauge before the
    rotation alignment.
    """
    nu = np.linalg.norm(u, axis=0)
    nv = np.linalg.norm(v, axis=0)
    return np.sqrt(np.where(nu > 0, nu, 1.0) / np.where(nv > 0, nv, 1.0))


def _check_prior_shapes(block, priors, k):
    for prior, dim, side in ((priors[0], block.n_rows, "U"), (priors[1], block.n_cols, "V")):
        if prior.mode == PROPAGATED and prior.P.shape != (dim, k, k):
            raise DataError(
                f"{side}-side propagated prior has shape {prior.P.shape}, "
                f"expected ({dim}, {k}, {k})"
            )


def _check_finite(out: ChainOutput) -> None:
    for name, arr in (("u means", out.u.means), ("u covariances", out.u.covariances),
                      ("v means", out.v.means), ("v covariances", out.v.covariances),
                      ("predictions", out.pred_mean), ("prediction moments", out.pred_m2)):
        if not np.isfinite(arr).all():
            raise NumericalError(f"non-finite values in chain output ({name})")
