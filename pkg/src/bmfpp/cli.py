"""Command-line front end: convert, split, stats, train, evaluate, sweep, bench."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import run_grid_sweep, run_scaling_bench
from .blocking import build_grid, save_grid, suggest_grid
from .checkpoints import load_checkpoint, save_checkpoint
from .config import (
    FORMATS, PREDICT_MODES, WORKERS_ENV_VAR, ModelConfig, RunConfig,
    config_hash, load_config_file, merge_config,
)
from .data import (
    SparseRatings, compute_stats, load_csv_triplets, load_matrix_market,
    train_test_split, write_csv_triplets, write_matrix_market,
)
from .errors import BmfppError, ConfigError, DataError, NumericalError
from .evaluate import rmse as compute_rmse
from .scheduler import execute_plan, plan_phases, predict_from_summaries

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bmfpp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bmfpp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_model=True):
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--data", help="training data path")
        p.add_argument("--test", help="held-out test data path")
        p.add_argument("--format", dest="fmt", choices=FORMATS, help="data file format")
        p.add_argument("--test-fraction", type=float, dest="test_fraction",
                       help="held-out fraction when --test is absent")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", dest="out_dir", help="output directory")
        if with_model:
            p.add_argument("--grid", help="IxJ block grid, e.g. 4x2")
            p.add_argument("--target-blocks", type=int, dest="target_blocks",
                           help="pick a near-square grid with about this many blocks")
            p.add_argument("--k", type=int, help="latent dimension")
            p.add_argument("--tau", type=float, help="residual noise precision")
            p.add_argument("--burn-in", type=int, dest="burn_in")
            p.add_argument("--samples", type=int)
            p.add_argument("--workers", type=int,
                           help=f"worker count (default ${WORKERS_ENV_VAR} or 1)")
            p.add_argument("--clamp", action="store_true", default=None,
                           help="clip predictions into the rating scale")
            p.add_argument("--predict", dest="predict_mode", choices=PREDICT_MODES,
                           help="prediction path (default block)")
            p.add_argument("--strategy", choices=("random", "contiguous"))
            p.add_argument("--no-center", dest="center", action="store_false", default=None,
                           help="do not subtract the training mean")

    p = sub.add_parser("convert", help="convert between data formats")
    common(p, with_model=False)
    p.add_argument("--to", required=True, choices=FORMATS, help="output format")

    p = sub.add_parser("split", help="write a deterministic train/test split")
    common(p, with_model=False)

    p = sub.add_parser("stats", help="print dataset statistics")
    common(p, with_model=False)

    p = sub.add_parser("train", help="train and write checkpoint + reports")
    common(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a test set")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep", help="block-size sweep, one run per grid")
    common(p)
    p.add_argument("--grids", help="comma-separated IxJ list, e.g. 1x1,2x2,4x2")

    p = sub.add_parser("bench", help="strong-scaling benchmark over worker counts")
    common(p)
    p.add_argument("--worker-counts", dest="worker_counts",
                   help="comma-separated counts, e.g. 1,2,4,8")
    return parser


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        i, j = text.lower().split("x")
        return int(i), int(j)
    except ValueError:
        raise ConfigError(f"grid must look like IxJ, got {text!r}") from None


def _gather_config(args) -> RunConfig:
    doc = load_config_file(args.config) if args.config else {}
    overrides = {}
    for key in ("data", "test", "fmt", "test_fraction", "seed", "out_dir",
                "target_blocks", "k", "tau", "burn_in", "samples", "workers",
                "clamp", "predict_mode", "strategy", "center"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "grid", None):
        overrides["grid"] = _parse_grid(args.grid)
    if "workers" not in overrides and "workers" not in doc:
        env = os.environ.get(WORKERS_ENV_VAR)
        if env:
            try:
                overrides["workers"] = int(env)
            except ValueError:
                raise ConfigError(f"bad {WORKERS_ENV_VAR} value {env!r}") from None
    return merge_config(doc, overrides)


def _load_data(path, fmt, cfg: RunConfig) -> SparseRatings:
    if not path:
        raise ConfigError("no data path given (use --data)")
    if not Path(path).exists():
        raise DataError(f"data file not found: {path}")
    if fmt == "mm":
        return load_matrix_market(path, scale_min=cfg.scale_min, scale_max=cfg.scale_max)
    return load_csv_triplets(path, scale_min=cfg.scale_min, scale_max=cfg.scale_max)


def _resolve_split(cfg: RunConfig):
    data = _load_data(cfg.data, cfg.fmt, cfg)
    if cfg.test:
        if not Path(cfg.test).exists():
            raise DataError(f"test file not found: {cfg.test}")
        test = _load_data(cfg.test, cfg.fmt, cfg)
        return data, test
    train, test = train_test_split(data, cfg.test_fraction, cfg.seed)
    return train, test


def _resolve_grid_shape(cfg: RunConfig, train: SparseRatings) -> tuple[int, int]:
    if cfg.grid is not None:
        return cfg.grid
    if cfg.target_blocks is not None:
        return suggest_grid(train, cfg.target_blocks)
    return (1, 1)


def _write_json(path, payload: dict) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_text(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _provenance(cfg: RunConfig) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed}


def cmd_convert(args) -> int:
    cfg = _gather_config(args)
    data = _load_data(cfg.data, cfg.fmt, cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(cfg.data).stem
    if args.to == "mm":
        out = out_dir / f"{stem}.mm"
        write_matrix_market(data, out)
    else:
        out = out_dir / f"{stem}.csv"
        write_csv_triplets(data, out)
    print(out)
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _gather_config(args)
    data = _load_data(cfg.data, cfg.fmt, cfg)
    train, test = train_test_split(data, cfg.test_fraction, cfg.seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = write_matrix_market if cfg.fmt == "mm" else write_csv_triplets
    ext = cfg.fmt
    writer(train, out_dir / f"train.{ext}")
    writer(test, out_dir / f"test.{ext}")
    _write_json(out_dir / "split.json", {
        **_provenance(cfg),
        "test_fraction": cfg.test_fraction,
        "n_train": train.nnz, "n_test": test.nnz,
    })
    print(f"train: {train.nnz} entries, test: {test.nnz} entries -> {out_dir}")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _gather_config(args)
    data = _load_data(cfg.data, cfg.fmt, cfg)
    stats = compute_stats(data)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _model_config(cfg: RunConfig) -> ModelConfig:
    return cfg.model


def cmd_train(args) -> int:
    cfg = _gather_config(args)
    train, test = _resolve_split(cfg)
    shape = _resolve_grid_shape(cfg, train)
    grid = build_grid(train, shape[0], shape[1], strategy=cfg.strategy, seed=cfg.seed)
    plan = plan_phases(grid)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = execute_plan(plan, train, grid, test, cfg.model, workers=cfg.workers,
                          seed=cfg.seed, center=cfg.center, clamp=cfg.clamp,
                          checkpoint_dir=out_dir / "phases")
    meta = {
        **_provenance(cfg),
        "grid": [grid.I, grid.J],
        "strategy": grid.strategy,
        "predict_mode": cfg.predict_mode,
        "n_rows": train.n_rows, "n_cols": train.n_cols,
        "scale_min": train.scale_min, "scale_max": train.scale_max,
        "clamp": cfg.clamp, "tau": cfg.model.tau,
    }
    save_checkpoint(out_dir / "checkpoint.npz", result, meta)
    save_grid(grid, out_dir / "grid.json")
    _write_json(out_dir / "report.json", result.report.to_dict())
    _write_text(out_dir / "report_blocks.csv", result.report.block_csv())
    metrics = {
        **_provenance(cfg),
        "grid": [grid.I, grid.J],
        "predict_mode": cfg.predict_mode,
        "rmse": result.report.rmse.get(cfg.predict_mode),
        "rmse_all_paths": result.report.rmse,
        "n_test_cells": int(result.test_rows.size),
    }
    _write_json(out_dir / "metrics.json", metrics)
    if result.report.rmse:
        print(f"rmse[{cfg.predict_mode}] = {result.report.rmse[cfg.predict_mode]:.6f}")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _gather_config(args)
    if not cfg.test:
        raise ConfigError("evaluate needs --test")
    test = _load_data(cfg.test, cfg.fmt, cfg)
    ckpt = load_checkpoint(args.checkpoint)
    if not ckpt.matches(test):
        raise DataError(
            f"checkpoint is for a {ckpt.u.n_rows} x {ckpt.v.n_rows} matrix, "
            f"test set is {test.n_rows} x {test.n_cols}"
        )
    mode = cfg.predict_mode
    tau = float(ckpt.meta.get("tau", cfg.model.tau))
    clamp = bool(ckpt.meta.get("clamp", cfg.clamp))
    scale_min = float(ckpt.meta.get("scale_min", test.scale_min))
    scale_max = float(ckpt.meta.get("scale_max", test.scale_max))
    if mode == "block":
        # stored per-cell predictions are final (offset and clamp already
        # applied at train time); cells the training run never routed fall
        # back to the aggregated posterior
        lookup = ckpt.stored_prediction_lookup()
        idx = np.array([lookup.get((int(r), int(c)), -1)
                        for r, c in zip(test.rows, test.cols)], dtype=np.int64)
        missing = idx < 0
        preds = np.empty(test.nnz)
        if missing.any():
            logger.info("%d test cells not in stored predictions; using the "
                        "aggregated posterior for them", int(missing.sum()))
            agg, _ = predict_from_summaries(
                ckpt.u, ckpt.v, test.rows[missing], test.cols[missing], tau,
                scale_min, scale_max, clamp, offset=ckpt.offset)
            preds[missing] = agg
        preds[~missing] = ckpt.test_pred_mean[idx[~missing]]
    else:
        preds, _ = predict_from_summaries(
            ckpt.u, ckpt.v, test.rows, test.cols, tau,
            scale_min, scale_max, clamp, offset=ckpt.offset)
    report = compute_rmse(test.rows, test.cols, preds, test)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        **_provenance(cfg),
        "checkpoint": str(args.checkpoint),
        "checkpoint_grid": ckpt.meta.get("grid"),
        "predict_mode": mode,
        **report.to_dict(),
    }
    _write_json(out_dir / "evaluation.json", payload)
    print(f"rmse[{mode}] = {report.rmse:.6f} over {report.n_cells} cells")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _gather_config(args)
    if not getattr(args, "grids", None):
        raise ConfigError("sweep needs --grids, e.g. --grids 1x1,2x2")
    grids = [_parse_grid(g) for g in args.grids.split(",")]
    train, test = _resolve_split(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points, failures = run_grid_sweep(
        train, test, grids, cfg.model, workers=cfg.workers, seed=cfg.seed,
        strategy=cfg.strategy, center=cfg.center, clamp=cfg.clamp,
        csv_path=out_dir / "sweep.csv")
    for (i, j), err in failures:
        print(f"grid {i}x{j} failed: {err}", file=sys.stderr)
    print(out_dir / "sweep.csv")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _gather_config(args)
    if not getattr(args, "worker_counts", None):
        raise ConfigError("bench needs --worker-counts, e.g. --worker-counts 1,2,4")
    try:
        counts = [int(c) for c in args.worker_counts.split(",")]
    except ValueError:
        raise ConfigError(f"bad worker counts {args.worker_counts!r}") from None
    train, test = _resolve_split(cfg)
    shape = _resolve_grid_shape(cfg, train)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points, reports = run_scaling_bench(
        train, test, shape, counts, cfg.model, seed=cfg.seed,
        strategy=cfg.strategy, center=cfg.center, clamp=cfg.clamp,
        csv_path=out_dir / "scaling.csv")
    for p, r in zip(points, reports):
        print(f"workers={p.workers}: {p.seconds:.2f}s speedup={p.speedup:.2f} "
              f"rows/sec={r.rows_per_sec:.0f} ratings/sec={r.ratings_per_sec:.0f}")
    print(out_dir / "scaling.csv")
    return EXIT_OK


COMMANDS = {
    "convert": cmd_convert,
    "split": cmd_split,
    "stats": cmd_stats,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BmfppError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
