"""Experiment orchestration: seeded multi-run execution, learning-rate grid
selection, and output writing.

A run is fully determined by (config, seed): the seed drives task
generation, rank assignment, client selection, adapter init, and batch
sampling. Seeds may execute in parallel threads; results are returned and
written in seed order, so output bytes do not depend on the thread count.
"""

from __future__ import annotations

import dataclasses
import statistics
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .baselines import run_strategy
from .config import LEARNING_RATE_GRID, ExperimentConfig
from .records import RunResult, rounds_to_target, write_jsonl, write_summary_csv

__all__ = [
    "run_experiment",
    "select_learning_rate",
    "rounds_to_target",
    "write_outputs",
    "summarize",
]


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    """One RunResult per configured seed, in seed order."""
    if cfg.threads > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(lambda s: run_strategy(cfg, s), cfg.seeds))
    return [run_strategy(cfg, s) for s in cfg.seeds]


def summarize(runs: list[RunResult]) -> dict:
    finals = [r.final_eval_loss for r in runs]
    return {
        "strategy": runs[0].strategy,
        "seeds": [r.seed for r in runs],
        "initial_eval_loss": [r.initial_eval_loss for r in runs],
        "final_eval_loss_mean": statistics.fmean(finals),
        "final_eval_loss_std": statistics.stdev(finals) if len(finals) > 1 else 0.0,
        "completed": all(r.completed for r in runs),
    }


def select_learning_rate(cfg: ExperimentConfig,
                         grid=LEARNING_RATE_GRID) -> tuple[float, dict]:
    """Pick the grid learning rate minimizing mean final eval loss for the
    configured strategy. Diverged settings are skipped."""
    results = {}
    for lr in grid:
        runs = run_experiment(dataclasses.replace(cfg, learning_rate=lr))
        if not all(r.completed for r in runs):
            results[lr] = float("inf")
            continue
        results[lr] = statistics.fmean(r.final_eval_loss for r in runs)
    best = min(results, key=results.get)
    if results[best] == float("inf"):
        raise RuntimeError("every learning rate in the grid diverged")
    return best, results


def write_outputs(runs: list[RunResult], out_dir: Path,
                  name: str = "records", label: str = "") -> tuple[Path, Path]:
    """Write the JSONL record stream and the sidecar CSV summary."""
    out_dir = Path(out_dir)
    jsonl = out_dir / f"{name}.jsonl"
    csv_path = out_dir / f"{name}_summary.csv"
    write_jsonl(runs, jsonl)
    write_summary_csv(runs, csv_path, label=label)
    return jsonl, csv_path
