"""Three-phase execution of block chains with propagated priors.

Phase (a) is the single anchor block (0, 0), run with hierarchical priors
on both sides. Phase (b) holds the rest of row group 0 and column group 0:
block (i, 0) reuses the anchor's column posteriors as fixed per-row priors
while its row side stays hierarchical, and symmetrically for (0, j). Phase
(c) holds everything else; block (i, j) takes its row prior from (i, 0) and
its column prior from (0, j). Blocks inside one phase are independent and
run concurrently on a worker pool; phase boundaries are barriers.

Workers map onto the paper-style notion of compute nodes: each phase first
gives every ready block one worker, then spreads spare workers across
blocks (proportionally to their row + column counts) as intra-block row
parallelism.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocking import BlockGrid, extract_block
from .config import ModelConfig
from .data import SparseRatings
from .errors import ConfigError, DataError, NumericalError
from .evaluate import MetricReport, rmse as compute_rmse
from .gaussians import (
    NaturalGaussian, RowSummaries, aggregate_row_posteriors, batch_to_natural,
    predict_cells,
)
from .gibbs import ChainOutput, SidePrior, StreamContext, run_chain

logger = logging.getLogger(__name__)

PHASE_A, PHASE_B, PHASE_C = 0, 1, 2
PHASE_NAMES = {PHASE_A: "a", PHASE_B: "b", PHASE_C: "c"}

BLOCK_CSV_HEADER = "phase,i,j,rows,cols,nnz,sweeps,seconds"


@dataclass(frozen=True)
class PhasePlan:
    """Dependency schedule over the blocks of a grid.

    prior_sources maps each block to (u_source, v_source): the earlier block
    whose posterior summaries seed that side's prior, or None for a
    hierarchical side.
    """

    I: int
    J: int
    phase_a: list
    phase_b: list
    phase_c: list
    prior_sources: dict

    def phases(self):
        return ((PHASE_A, self.phase_a), (PHASE_B, self.phase_b), (PHASE_C, self.phase_c))

    def n_blocks(self) -> int:
        return len(self.phase_a) + len(self.phase_b) + len(self.phase_c)


def plan_phases(grid: BlockGrid) -> PhasePlan:
    """Build the (a)/(b)/(c) schedule with per-block prior sources."""
    I, J = grid.I, grid.J
    phase_a = [(0, 0)]
    phase_b = [(i, 0) for i in range(1, I)] + [(0, j) for j in range(1, J)]
    phase_c = [(i, j) for i in range(1, I) for j in range(1, J)]
    sources = {(0, 0): (None, None)}
    for i in range(1, I):
        sources[(i, 0)] = (None, (0, 0))
    for j in range(1, J):
        sources[(0, j)] = ((0, 0), None)
    for i in range(1, I):
        for j in range(1, J):
            sources[(i, j)] = ((i, 0), (0, j))
    return PhasePlan(I=I, J=J, phase_a=phase_a, phase_b=phase_b, phase_c=phase_c,
                     prior_sources=sources)


@dataclass(frozen=True)
class SampleAccounting:
    """Sweep and row-update totals implied by a grid and chain length."""

    total_sweeps: int
    row_updates: int


def sample_accounting(grid: BlockGrid, cfg: ModelConfig) -> SampleAccounting:
    """Every block gets the same number of sweeps, so an I x J partition
    takes I*J times the samples of a single block."""
    sweeps = cfg.sweeps
    return SampleAccounting(
        total_sweeps=grid.I * grid.J * sweeps,
        row_updates=sweeps * (grid.J * grid.n_rows + grid.I * grid.n_cols),
    )


@dataclass(frozen=True)
class ParallelismBounds:
    """Independent blocks per parallel phase; `paper_bound` carries the
    rounder I+J and I*J node counts usually quoted for this scheme."""

    phase_b: int
    phase_c: int
    paper_bound: tuple


def max_phase_parallelism(grid: BlockGrid) -> ParallelismBounds:
    I, J = grid.I, grid.J
    return ParallelismBounds(
        phase_b=(I - 1) + (J - 1),
        phase_c=(I - 1) * (J - 1),
        paper_bound=(I + J, I * J),
    )


@dataclass(eq=False)
class BlockReport:
    phase: int
    i: int
    j: int
    rows: int
    cols: int
    nnz: int
    sweeps: int
    seconds: float
    workers: int
    dispatched_at: float
    completed_at: float
    resumed: bool = False


@dataclass(eq=False)
class RunReport:
    """Measured quantities of one execute_plan run."""

    workers: int
    blocks: list = field(default_factory=list)
    phase_seconds: dict = field(default_factory=dict)
    row_updates: int = 0
    ratings_processed: int = 0
    rmse: dict = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(self.phase_seconds.values())

    @property
    def rows_per_sec(self) -> float:
        t = self.total_seconds
        return self.row_updates / t if t > 0 else float("nan")

    @property
    def ratings_per_sec(self) -> float:
        t = self.total_seconds
        return self.ratings_processed / t if t > 0 else float("nan")

    def block_csv(self) -> str:
        lines = [BLOCK_CSV_HEADER]
        for b in sorted(self.blocks, key=lambda b: (b.phase, b.i, b.j)):
            lines.append(
                f"{PHASE_NAMES[b.phase]},{b.i},{b.j},{b.rows},{b.cols},"
                f"{b.nnz},{b.sweeps},{b.seconds:.6f}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "workers": self.workers,
            "phase_seconds": {PHASE_NAMES[p]: s for p, s in sorted(self.phase_seconds.items())},
            "total_seconds": self.total_seconds,
            "row_updates": self.row_updates,
            "ratings_processed": self.ratings_processed,
            "rows_per_sec": self.rows_per_sec,
            "ratings_per_sec": self.ratings_per_sec,
            "rmse": dict(self.rmse),
            "blocks": [
                {
                    "phase": PHASE_NAMES[b.phase], "i": b.i, "j": b.j,
                    "rows": b.rows, "cols": b.cols, "nnz": b.nnz,
                    "sweeps": b.sweeps, "seconds": b.seconds,
                    "workers": b.workers, "resumed": b.resumed,
                    "dispatched_at": b.dispatched_at, "completed_at": b.completed_at,
                }
                for b in sorted(self.blocks, key=lambda b: (b.phase, b.i, b.j))
            ],
        }


@dataclass(eq=False)
class ExecutionResult:
    """Chain outputs plus the aggregated posterior and test predictions."""

    outputs: dict
    report: RunReport
    u: RowSummaries                 # aggregated, global row order
    v: RowSummaries
    offset: float
    test_pred_mean: np.ndarray      # aligned with the test set's entry order
    test_pred_var: np.ndarray
    test_pred_mean_aggregated: np.ndarray
    test_pred_var_aggregated: np.ndarray
    test_rows: np.ndarray
    test_cols: np.ndarray
    metrics: dict = field(default_factory=dict)


def _allocate_workers(keys, sizes, workers: int) -> dict:
    """One worker per ready block first, spare ones proportional to size."""
    alloc = {k: 1 for k in keys}
    spare = workers - len(keys)
    if spare <= 0:
        return alloc
    total = sum(sizes[k] for k in keys)
    shares = [(k, spare * sizes[k] / total) for k in keys]
    given = 0
    for k, share in shares:
        alloc[k] += int(share)
        given += int(share)
    remainders = sorted(shares, key=lambda ks: (-(ks[1] - int(ks[1])), ks[0]))
    for k, _ in remainders[: spare - given]:
        alloc[k] += 1
    return alloc


def _run_block_worker(key, phase, block, prior_u, prior_v, q_rows, q_cols,
                      cfg, seed, n_threads):
    """Top-level task body so it pickles under the spawn start method."""
    i, j = key
    ctx = StreamContext(seed=seed, phase=phase, i=i, j=j)
    t0 = time.perf_counter()
    out = run_chain(block, (prior_u, prior_v), (q_rows, q_cols), cfg, ctx,
                    n_threads=n_threads)
    return key, out, time.perf_counter() - t0


def _warmup_worker(_):
    return os.getpid()


def _prior_for(side_summaries: RowSummaries) -> SidePrior:
    p, h = batch_to_natural(side_summaries)
    return SidePrior.propagated(p, h)


def _route_test_cells(test: SparseRatings, grid: BlockGrid) -> dict:
    """Group test entries by owning block; keep scatter-back indices."""
    gi = grid.row_group()[test.rows]
    gj = grid.col_group()[test.cols]
    lr = grid.row_local()[test.rows]
    lc = grid.col_local()[test.cols]
    routed = {}
    for i in range(grid.I):
        for j in range(grid.J):
            sel = np.flatnonzero((gi == i) & (gj == j))
            routed[(i, j)] = (lr[sel], lc[sel], sel)
    return routed


def _empty_routing(keys) -> dict:
    z = np.zeros(0, dtype=np.int64)
    return {k: (z, z, z) for k in keys}


def _centered(ratings: SparseRatings, offset: float) -> SparseRatings:
    if offset == 0.0:
        return ratings
    return SparseRatings(
        ratings.n_rows, ratings.n_cols,
        ratings.rows, ratings.cols, ratings.values - offset,
        ratings.scale_min - offset, ratings.scale_max - offset,
    )


def execute_plan(plan: PhasePlan, data: SparseRatings, grid: BlockGrid,
                 test: SparseRatings | None, cfg: ModelConfig, workers: int,
                 seed: int = 0, center: bool = True, clamp: bool = False,
                 checkpoint_dir=None, resume: bool = False) -> ExecutionResult:
    """Run every block chain in dependency order and assemble the results.

    Within phases (b) and (c) blocks run concurrently up to `workers`
    processes; spare workers accelerate row updates inside running blocks.
    Posterior summaries, predictions and RMSE are pure functions of
    (inputs, seed): worker count only changes timings. Phase wall-clock is
    measured with monotonic clocks after the worker pool is warm, so pool
    start-up and data loading are excluded.
    """
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    if grid.n_rows != data.n_rows or grid.n_cols != data.n_cols:
        raise DataError("grid does not match data dimensions")
    have_test = test is not None and test.nnz > 0
    if have_test and (test.n_rows != data.n_rows or test.n_cols != data.n_cols):
        raise DataError("test set dimensions do not match training data")

    offset = float(data.values.mean()) if (center and data.nnz) else 0.0
    blocks = {}
    for _, keys in plan.phases():
        for key in keys:
            blocks[key] = _centered(extract_block(data, grid, *key).ratings, offset)
    routed = _route_test_cells(test, grid) if have_test else _empty_routing(blocks)
    sizes = {k: blocks[k].n_rows + blocks[k].n_cols for k in blocks}

    ckpt = (_PhaseCheckpoints(checkpoint_dir, grid, cfg, seed, offset, test)
            if checkpoint_dir else None)

    report = RunReport(workers=workers)
    outputs = {}
    pool = None
    try:
        if workers > 1 and plan.n_blocks() > 1:
            width = min(workers, max(len(plan.phase_b), len(plan.phase_c), 1))
            pool = ProcessPoolExecutor(max_workers=width, mp_context=mp.get_context("spawn"))
            list(pool.map(_warmup_worker, range(width)))

        for phase, keys in plan.phases():
            if not keys:
                report.phase_seconds[phase] = 0.0
                continue
            if ckpt is not None and resume:
                loaded = ckpt.load_phase(phase, keys)
                if loaded is not None:
                    for key, (out, seconds) in loaded.items():
                        outputs[key] = out
                        report.blocks.append(_block_report(
                            phase, key, blocks[key], cfg, seconds, 0, 0.0, 0.0, resumed=True))
                    report.phase_seconds[phase] = 0.0
                    logger.info("phase (%s): %d block(s) loaded from checkpoint",
                                PHASE_NAMES[phase], len(keys))
                    continue
            alloc = _allocate_workers(keys, sizes, workers)
            t_phase = time.perf_counter()
            results = _run_phase(pool, plan, phase, keys, blocks, routed, outputs,
                                 cfg, seed, alloc)
            report.phase_seconds[phase] = time.perf_counter() - t_phase
            for key in keys:
                out, seconds, t_disp, t_done = results[key]
                outputs[key] = out
                report.blocks.append(_block_report(
                    phase, key, blocks[key], cfg, seconds, alloc[key], t_disp, t_done))
            if ckpt is not None:
                ckpt.save_phase(phase, {k: (outputs[k], results[k][1]) for k in keys})
            logger.info("phase (%s): %d block(s) in %.2fs",
                        PHASE_NAMES[phase], len(keys), report.phase_seconds[phase])
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    report.row_updates = sum(o.row_updates for o in outputs.values())
    report.ratings_processed = cfg.sweeps * sum(b.nnz for b in blocks.values())

    u_global, v_global = _aggregate_sides(grid, outputs, cfg)
    z = np.zeros(0)
    result = ExecutionResult(
        outputs=outputs, report=report, u=u_global, v=v_global, offset=offset,
        test_pred_mean=z, test_pred_var=z,
        test_pred_mean_aggregated=z, test_pred_var_aggregated=z,
        test_rows=np.zeros(0, np.int64), test_cols=np.zeros(0, np.int64),
    )
    if have_test:
        _attach_predictions(result, grid, routed, test, cfg, clamp)
    return result


def _block_report(phase, key, block, cfg, seconds, workers, t_disp, t_done, resumed=False):
    return BlockReport(
        phase=phase, i=key[0], j=key[1],
        rows=block.n_rows, cols=block.n_cols, nnz=block.nnz,
        sweeps=cfg.sweeps, seconds=seconds, workers=workers,
        dispatched_at=t_disp, completed_at=t_done, resumed=resumed,
    )


def _run_phase(pool, plan, phase, keys, blocks, routed, outputs, cfg, seed, alloc):
    """Run one phase's blocks, inline or on the pool; returns per-key results."""
    tasks = []
    for key in keys:
        u_src, v_src = plan.prior_sources[key]
        prior_u = _prior_for(outputs[u_src].u) if u_src else SidePrior.hierarchical()
        prior_v = _prior_for(outputs[v_src].v) if v_src else SidePrior.hierarchical()
        q_rows, q_cols, _ = routed[key]
        tasks.append((key, phase, blocks[key], prior_u, prior_v, q_rows, q_cols,
                      cfg, seed, alloc[key]))
    results = {}
    if pool is None:
        for task in tasks:
            t_disp = time.monotonic()
            try:
                key, out, seconds = _run_block_worker(*task)
            except NumericalError as exc:
                raise NumericalError(
                    f"block ({task[0][0]}, {task[0][1]}) failed: {exc}") from exc
            results[key] = (out, seconds, t_disp, time.monotonic())
        return results
    futures = {}
    for task in tasks:
        t_disp = time.monotonic()
        futures[pool.submit(_run_block_worker, *task)] = (task[0], t_disp)
    wait(futures, return_when=FIRST_EXCEPTION)
    for fut, (key, t_disp) in futures.items():
        exc = fut.exception()
        if exc is not None:
            raise NumericalError(f"block ({key[0]}, {key[1]}) failed: {exc}") from exc
        rkey, out, seconds = fut.result()
        results[rkey] = (out, seconds, t_disp, time.monotonic())
    return results


def _aggregate_sides(grid, outputs, cfg):
    """Combine each row's per-block posteriors into one summary per global row.

    The anchor for row group i is block (i, 0), and for column group j block
    (0, j): the anchor's posterior is exactly the propagated prior the other
    blocks of that group consumed, so it is divided away L-1 times. A group
    covered by a single block passes through unchanged.
    """
    k = cfg.k
    u_means = np.empty((grid.n_rows, k))
    u_covs = np.empty((grid.n_rows, k, k))
    v_means = np.empty((grid.n_cols, k))
    v_covs = np.empty((grid.n_cols, k, k))
    for i in range(grid.I):
        sides = [outputs[(i, j)].u for j in range(grid.J)]
        _aggregate_group(sides, grid.rows_of_group(i), u_means, u_covs, cfg)
    for j in range(grid.J):
        sides = [outputs[(i, j)].v for i in range(grid.I)]
        _aggregate_group(sides, grid.cols_of_group(j), v_means, v_covs, cfg)
    return (RowSummaries(u_means, u_covs, cfg.samples),
            RowSummaries(v_means, v_covs, cfg.samples))


def _aggregate_group(sides, global_ids, out_means, out_covs, cfg):
    ell = len(sides)
    if ell == 1:
        out_means[global_ids] = sides[0].means
        out_covs[global_ids] = sides[0].covariances
        return
    naturals = [batch_to_natural(s) for s in sides]
    anchor_p, anchor_h = naturals[0]
    for local, gid in enumerate(global_ids):
        posts = [NaturalGaussian(p[local], h[local]) for p, h in naturals]
        prior = NaturalGaussian(anchor_p[local], anchor_h[local])
        agg = aggregate_row_posteriors(posts, prior, ell - 1, jitter=cfg.jitter,
                                       row=int(gid), n_samples=cfg.samples)
        out_means[gid] = agg.mean
        out_covs[gid] = agg.covariance


def _attach_predictions(result, grid, routed, test, cfg, clamp):
    """Scatter per-block accumulators back to the test set's entry order and
    compute both prediction paths plus their RMSE."""
    n_test = test.nnz
    acc_mean = np.empty(n_test)
    acc_m2 = np.empty(n_test)
    block_of = np.empty((n_test, 2), dtype=np.int64)
    for key, (_, _, sel) in routed.items():
        if sel.size == 0:
            continue
        out = result.outputs[key]
        acc_mean[sel] = out.pred_mean
        acc_m2[sel] = out.pred_m2
        block_of[sel] = key
    mean_b, var_b = predict_cells(acc_mean, acc_m2, cfg.tau,
                                  test.scale_min, test.scale_max, clamp,
                                  offset=result.offset)
    mean_a, var_a = predict_from_summaries(
        result.u, result.v, test.rows, test.cols, cfg.tau,
        test.scale_min, test.scale_max, clamp, offset=result.offset)
    result.test_pred_mean = mean_b
    result.test_pred_var = var_b
    result.test_pred_mean_aggregated = mean_a
    result.test_pred_var_aggregated = var_a
    result.test_rows = test.rows
    result.test_cols = test.cols
    result.metrics["block"] = compute_rmse(test.rows, test.cols, mean_b, test,
                                           block_of=block_of)
    result.metrics["aggregated"] = compute_rmse(test.rows, test.cols, mean_a, test)
    result.report.rmse = {name: m.rmse for name, m in result.metrics.items()}


def predict_from_summaries(u: RowSummaries, v: RowSummaries,
                           rows: np.ndarray, cols: np.ndarray, tau: float,
                           scale_min: float, scale_max: float, clamp: bool,
                           offset: float = 0.0):
    """Plug-in prediction from aggregated posteriors.

    Treats u and v as independent Gaussians: the mean is the dot product of
    means, the variance is the standard product-of-independent-Gaussians
    moment plus observation noise 1/tau.
    """
    mu = u.means[rows]
    mv = v.means[cols]
    su = u.covariances[rows]
    sv = v.covariances[cols]
    mean = np.einsum("qk,qk->q", mu, mv) + offset
    var = (
        np.einsum("qk,qkl,ql->q", mu, sv, mu)
        + np.einsum("qk,qkl,ql->q", mv, su, mv)
        + np.einsum("qkl,qlk->q", su, sv)
        + 1.0 / tau
    )
    if clamp:
        mean = np.clip(mean, scale_min, scale_max)
    return mean, var


class _PhaseCheckpoints:
    """Persist per-phase chain outputs so later phases can be re-run alone."""

    def __init__(self, directory, grid, cfg, seed, offset, test):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.tag = _provenance_tag(grid, cfg, seed, offset, test)

    def _path(self, phase) -> Path:
        return self.dir / f"phase_{PHASE_NAMES[phase]}.npz"

    def save_phase(self, phase, keyed_outputs) -> None:
        arrays = {}
        for (i, j), (out, seconds) in keyed_outputs.items():
            pfx = f"b{i}_{j}:"
            arrays[pfx + "u_means"] = out.u.means
            arrays[pfx + "u_covs"] = out.u.covariances
            arrays[pfx + "v_means"] = out.v.means
            arrays[pfx + "v_covs"] = out.v.covariances
            arrays[pfx + "query_rows"] = out.query_rows
            arrays[pfx + "query_cols"] = out.query_cols
            arrays[pfx + "pred_mean"] = out.pred_mean
            arrays[pfx + "pred_m2"] = out.pred_m2
            arrays[pfx + "sweep_seconds"] = out.sweep_seconds
            arrays[pfx + "scalars"] = np.array([out.n_samples, out.row_updates, seconds])
        arrays["provenance"] = np.frombuffer(self.tag.encode("utf-8"), dtype=np.uint8)
        tmp = self._path(phase).with_suffix(".npz.tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, self._path(phase))

    def load_phase(self, phase, keys):
        path = self._path(phase)
        if not path.exists():
            return None
        with np.load(path) as npz:
            tag = npz["provenance"].tobytes().decode("utf-8")
            if tag != self.tag:
                logger.warning("checkpoint %s has different provenance; recomputing", path)
                return None
            loaded = {}
            for (i, j) in keys:
                pfx = f"b{i}_{j}:"
                if pfx + "scalars" not in npz:
                    return None
                scalars = npz[pfx + "scalars"]
                out = ChainOutput(
                    u=RowSummaries(npz[pfx + "u_means"], npz[pfx + "u_covs"], int(scalars[0])),
                    v=RowSummaries(npz[pfx + "v_means"], npz[pfx + "v_covs"], int(scalars[0])),
                    query_rows=npz[pfx + "query_rows"],
                    query_cols=npz[pfx + "query_cols"],
                    pred_mean=npz[pfx + "pred_mean"],
                    pred_m2=npz[pfx + "pred_m2"],
                    n_samples=int(scalars[0]),
                    sweep_seconds=npz[pfx + "sweep_seconds"],
                    row_updates=int(scalars[1]),
                )
                loaded[(i, j)] = (out, float(scalars[2]))
        return loaded


def _provenance_tag(grid, cfg, seed, offset, test) -> str:
    sha = hashlib.sha256()
    sha.update(repr(cfg.to_dict()).encode())
    sha.update(f"{seed}|{offset!r}|{grid.I}x{grid.J}|{grid.seed}|{grid.strategy}"
               f"|{grid.n_rows}x{grid.n_cols}".encode())
    if test is not None and test.nnz:
        sha.update(test.rows.tobytes())
        sha.update(test.cols.tobytes())
    return sha.hexdigest()
