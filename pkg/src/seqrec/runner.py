"""Experiment runner: the only component that owns the filesystem layout.

A run cell produces three artifacts in its directory:
  metrics.csv    per-epoch training/validation metrics (fixed schema)
  checkpoint.bin best-validation encoder parameters
  manifest.json  resolved config, config hash, code/library versions, seeds,
                 wall-clock timings, dataset stats, final test metrics, and
                 content hashes of the deterministic outputs

Everything except wall-clock is a pure function of the manifest's config, so a
rerun from the manifest regenerates metrics.csv and checkpoint.bin
byte-identically (the seconds column is restored from the manifest's recorded
timings; the deterministic columns are recomputed and verified against the
recorded content hash).
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import multiprocessing as mp

import numpy as np

from . import __version__
from .config import (ConfigError, ExperimentConfig, MAX_SWEEP_CELLS,
                     config_from_dict, config_to_dict)
from .data import (DataError, Splits, Vocab, build_sequences, five_core_filter,
                   ingest, split_leave_one_out)
from .encoder import save_checkpoint
from .evaluation import evaluate
from .synthetic import generate_log
from .training import RunMetrics, TrainingDiverged, train

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(resolved: dict, cell: dict) -> str:
    return hashlib.sha256(canonical_json({"config": resolved, "cell": cell}).encode()).hexdigest()


def metrics_content_hash(metrics: RunMetrics) -> str:
    """Hash of the deterministic CSV content (seconds column zeroed)."""
    lines = metrics.csv_lines(seconds_override=[0.0] * len(metrics.epochs))
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def prepare_dataset(cfg: ExperimentConfig) -> tuple[Splits, Vocab, dict]:
    """Build (splits, vocab, stats) from the configured source."""
    if cfg.source == "synthetic":
        log = generate_log(cfg.synthetic)
    else:
        log = ingest(cfg.data_path)
    n_raw_users = len(set(r[0] for r in log.records))
    log = five_core_filter(log)
    sequences, vocab = build_sequences(log, cfg.max_len)
    splits = split_leave_one_out(sequences)
    lens_raw: dict[str, int] = {}
    for user, _, _ in log.records:
        lens_raw[user] = lens_raw.get(user, 0) + 1
    stats = {
        "n_events": len(log.records),
        "n_users_raw": n_raw_users,
        "n_users": len(sequences),
        "n_users_split": len(splits.train),
        "n_items": vocab.n_items,
        "excluded_short": splits.excluded,
        "malformed_lines": log.malformed,
        # sequence length both before and after window truncation
        "avg_len_raw": float(np.mean(list(lens_raw.values()))),
        "avg_len_window": float(np.mean([len(s) for s in sequences.values()])),
    }
    return splits, vocab, stats


def apply_cell(cfg: ExperimentConfig, cell: dict) -> ExperimentConfig:
    """Override swept axis values (alpha/beta/gamma/k on the sampler, seed)."""
    train_cfg = cfg.train
    spec = train_cfg.sampler
    spec_over = {k: v for k, v in cell.items() if k in ("alpha", "beta", "gamma", "k")}
    if spec_over:
        spec = replace(spec, **spec_over)
    train_cfg = replace(train_cfg, sampler=spec)
    if "seed" in cell:
        train_cfg = replace(train_cfg, seed=int(cell["seed"]))
        cfg = replace(cfg, seed=int(cell["seed"]))
    return replace(cfg, train=train_cfg, sweep={})


def cell_name(cell: dict) -> str:
    if not cell:
        return "run"
    return "_".join(f"{k}={cell[k]}" for k in sorted(cell))


def run_cell(cfg: ExperimentConfig, cell: dict, out_dir: Path,
             seconds_override: list[float] | None = None) -> dict:
    """Train one configuration and write its artifacts. Returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    effective = apply_cell(cfg, cell)
    resolved = config_to_dict(cfg)
    tic = time.perf_counter()
    splits, vocab, stats = prepare_dataset(effective)
    try:
        best_params, metrics = train(effective.train, splits, vocab)
    except TrainingDiverged as exc:
        dump = out_dir / "diverged_batch.json"
        dump.write_text(json.dumps({k: np.asarray(v).tolist() for k, v in exc.batch_dump.items()}))
        raise
    test = evaluate(best_params, splits.test_contexts, splits.test_targets, k_list=(5, 10))
    total_s = time.perf_counter() - tic

    measured_s = [rec.seconds for rec in metrics.epochs]
    csv_seconds = seconds_override if seconds_override is not None else measured_s
    csv_text = "\n".join(metrics.csv_lines(seconds_override=csv_seconds)) + "\n"
    (out_dir / "metrics.csv").write_text(csv_text)
    save_checkpoint(out_dir / "checkpoint.bin", best_params)

    # per_epoch_s always matches the CSV on disk so any manifest, including a
    # rerun's, can regenerate its own artifacts byte-identically
    wall_clock = {"total_s": total_s, "per_epoch_s": list(csv_seconds)}
    if seconds_override is not None:
        wall_clock["measured_per_epoch_s"] = measured_s
    manifest = {
        "format": MANIFEST_FORMAT,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "config": resolved,
        "cell": cell,
        "config_hash": config_hash(resolved, cell),
        "seed": effective.train.seed,
        "dataset": stats,
        "wall_clock": wall_clock,
        "best_epoch": metrics.best_epoch,
        "epochs_run": len(metrics.epochs),
        "test": {"hr5": test.hr[5], "hr10": test.hr[10],
                 "ndcg5": test.ndcg[5], "ndcg10": test.ndcg[10]},
        "metrics_content_hash": metrics_content_hash(metrics),
        "outputs": {"metrics_csv": "metrics.csv", "checkpoint": "checkpoint.bin"},
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _worker(payload: tuple[dict, dict, str]) -> dict:
    resolved, cell, out_dir = payload
    cfg = config_from_dict(resolved)
    return run_cell(cfg, cell, Path(out_dir))


def _worker_init() -> None:
    # each sweep worker gets one BLAS thread; parallelism comes from processes
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def run_experiment(cfg: ExperimentConfig, force: bool = False, log=print) -> dict:
    """Run the whole experiment (single cell or sweep) under cfg.out_dir."""
    cells = cfg.sweep_cells()
    log(f"sweep cross product: {len(cells)} run(s)")
    if len(cells) > MAX_SWEEP_CELLS and not (force or cfg.allow_large_sweep):
        raise ConfigError(
            f"sweep would launch {len(cells)} runs (> {MAX_SWEEP_CELLS}); "
            "pass --force or set run.allow_large_sweep = true"
        )
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    resolved = config_to_dict(cfg)

    if len(cells) == 1 and not cells[0]:
        manifest = run_cell(cfg, {}, out_root)
        log(f"run complete: best epoch {manifest['best_epoch']}, "
            f"test ndcg10 {manifest['test']['ndcg10']:.4f}")
        return {"cells": [manifest], "out_dir": str(out_root)}

    jobs = [(resolved, cell, str(out_root / "cells" / cell_name(cell))) for cell in cells]
    manifests: list[dict] = []
    workers = max(1, cfg.threads)
    if workers == 1:
        for job in jobs:
            manifests.append(_worker(job))
            log(f"finished {cell_name(job[1])}")
    else:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                 initializer=_worker_init) as pool:
            for cell, manifest in zip(cells, pool.map(_worker, jobs)):
                manifests.append(manifest)
                log(f"finished {cell_name(cell)}")
    summary = {
        "format": MANIFEST_FORMAT,
        "config": resolved,
        "cells": [{"cell": m["cell"], "dir": str(Path("cells") / cell_name(m["cell"])),
                   "test": m["test"], "best_epoch": m["best_epoch"]} for m in manifests],
    }
    (out_root / "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"cells": manifests, "out_dir": str(out_root)}


def rerun_from_manifest(manifest_path, out_dir=None, log=print) -> dict:
    """Reproduce a cell's outputs from its manifest.

    Deterministic content is recomputed and verified against the recorded
    hash; the seconds column is restored from the manifest so the regenerated
    metrics.csv is byte-identical to the original.
    """
    manifest_path = Path(manifest_path)
    recorded = json.loads(manifest_path.read_text())
    if recorded.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"unsupported manifest format: {recorded.get('format')}")
    cfg = config_from_dict(recorded["config"])
    target = Path(out_dir) if out_dir else manifest_path.parent
    manifest = run_cell(cfg, recorded["cell"], target,
                        seconds_override=recorded["wall_clock"]["per_epoch_s"])
    if manifest["metrics_content_hash"] != recorded["metrics_content_hash"]:
        raise DataError(
            "rerun did not reproduce the recorded metrics "
            f"({manifest['metrics_content_hash']} != {recorded['metrics_content_hash']})"
        )
    log(f"reproduced {manifest_path} into {target}")
    return manifest


# ---------------------------------------------------------------------------
# plot-data export
# ---------------------------------------------------------------------------

_METRIC_COLUMNS = ("loss", "alpha", "beta", "hr5", "hr10", "ndcg5", "ndcg10", "seconds")


def export_plots(metrics_dir) -> dict:
    """Collect every metrics.csv under a directory into self-describing JSON
    series (one per run, keyed by its cell parameters when a manifest exists)."""
    root = Path(metrics_dir)
    if not root.is_dir():
        raise DataError(f"{metrics_dir}: not a directory")
    series = []
    warnings = []
    for csv_path in sorted(root.rglob("metrics.csv")):
        try:
            points = _read_metrics_csv(csv_path)
        except (ValueError, OSError) as exc:
            warnings.append(f"skipped {csv_path}: {exc}")
            continue
        key: dict = {"dir": str(csv_path.parent.relative_to(root))}
        man = csv_path.parent / MANIFEST_NAME
        if man.exists():
            try:
                recorded = json.loads(man.read_text())
                key["cell"] = recorded.get("cell", {})
                key["test"] = recorded.get("test", {})
                key["seed"] = recorded.get("seed")
            except (json.JSONDecodeError, OSError) as exc:
                warnings.append(f"unreadable manifest next to {csv_path}: {exc}")
        cumulative = 0.0
        for pt in points:
            cumulative += pt["seconds"]
            pt["cumulative_seconds"] = cumulative
        series.append({"key": key, "points": points})
    if not series and not warnings:
        raise DataError(f"{metrics_dir}: no metrics.csv files found")
    return {"format": 1, "series": series, "warnings": warnings}


def _read_metrics_csv(path: Path) -> list[dict]:
    lines = path.read_text().strip().splitlines()
    from .training import METRICS_HEADER

    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError("unexpected header")
    points = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 9:
            raise ValueError(f"expected 9 columns, got {len(parts)}")
        points.append({"epoch": int(parts[0]),
                       **{name: float(v) for name, v in zip(_METRIC_COLUMNS, parts[1:])}})
    return points
