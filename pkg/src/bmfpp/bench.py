"""Block-size sweeps and strong-scaling benchmarks with CSV emission."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .blocking import build_grid
from .config import ModelConfig
from .data import SparseRatings
from .errors import BmfppError, ConfigError
from .scheduler import RunReport, execute_plan, plan_phases

logger = logging.getLogger(__name__)

SWEEP_CSV_HEADER = "I,J,seconds,rmse,aspect"
SCALING_CSV_HEADER = "workers,seconds,speedup,pareto"


@dataclass(frozen=True)
class SweepPoint:
    """One grid's cost/quality trade-off; aspect is (N/I)/(D/J)."""

    I: int
    J: int
    seconds: float
    rmse: float
    aspect: float


def run_grid_sweep(train: SparseRatings, test: SparseRatings, grids,
                   cfg: ModelConfig, workers: int = 1, seed: int = 0,
                   strategy: str = "random", center: bool = True,
                   clamp: bool = False, csv_path=None):
    """Train/evaluate once per grid with identical seeds.

    Returns (points, failures); a failed grid is recorded with its error and
    the remaining grids still run. Optionally writes the bubble-plot source
    CSV.
    """
    if not grids:
        raise ConfigError("need at least one grid to sweep")
    points = []
    failures = []
    for I, J in grids:
        try:
            grid = build_grid(train, I, J, strategy=strategy, seed=seed)
            result = execute_plan(plan_phases(grid), train, grid, test, cfg,
                                  workers=workers, seed=seed, center=center, clamp=clamp)
            aspect = (train.n_rows / I) / (train.n_cols / J)
            points.append(SweepPoint(I=I, J=J,
                                     seconds=result.report.total_seconds,
                                     rmse=result.report.rmse["block"],
                                     aspect=aspect))
            logger.info("sweep %dx%d: rmse=%.4f seconds=%.2f", I, J,
                        points[-1].rmse, points[-1].seconds)
        except BmfppError as exc:
            failures.append(((I, J), str(exc)))
            logger.warning("sweep %dx%d failed: %s", I, J, exc)
    if csv_path is not None:
        write_sweep_csv(points, csv_path)
    return points, failures


def write_sweep_csv(points, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SWEEP_CSV_HEADER + "\n")
        for p in points:
            fh.write(f"{p.I},{p.J},{p.seconds:.6f},{p.rmse:.6f},{p.aspect:.6f}\n")


@dataclass(frozen=True)
class ScalingPoint:
    workers: int
    seconds: float
    speedup: float
    pareto: bool


def run_scaling_bench(train: SparseRatings, test: SparseRatings | None,
                      grid_shape, worker_counts, cfg: ModelConfig,
                      seed: int = 0, strategy: str = "random",
                      center: bool = True, clamp: bool = False, csv_path=None):
    """Strong scaling: fixed data and seed, varying worker count.

    Speedup is measured against the first count; Pareto-optimal points are
    those not dominated by another point with <= workers and < time.
    Returns (points, reports).
    """
    if not worker_counts:
        raise ConfigError("need at least one worker count")
    I, J = grid_shape
    grid = build_grid(train, I, J, strategy=strategy, seed=seed)
    plan = plan_phases(grid)
    reports: list[RunReport] = []
    times = []
    for w in worker_counts:
        result = execute_plan(plan, train, grid, test, cfg, workers=w,
                              seed=seed, center=center, clamp=clamp)
        reports.append(result.report)
        times.append(result.report.total_seconds)
        logger.info("scaling workers=%d: %.2fs (%.0f rows/sec, %.0f ratings/sec)",
                    w, times[-1], result.report.rows_per_sec, result.report.ratings_per_sec)
    base = times[0]
    points = []
    for idx, w in enumerate(worker_counts):
        dominated = any(
            worker_counts[o] <= w and times[o] < times[idx]
            for o in range(len(worker_counts)) if o != idx
        )
        points.append(ScalingPoint(workers=w, seconds=times[idx],
                                   speedup=base / times[idx], pareto=not dominated))
    if csv_path is not None:
        write_scaling_csv(points, csv_path)
    return points, reports


def write_scaling_csv(points, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SCALING_CSV_HEADER + "\n")
        for p in points:
            fh.write(f"{p.workers},{p.seconds:.6f},{p.speedup:.6f},{int(p.pareto)}\n")
