#!/usr/bin/env python3
"""
seed-sweep - Repeat a run over several seeds and aggregate the results.

Each seed trains into ``<out>/seed_<s>``; with ``--baseline`` the same seed is
also trained with every phase on plain AdamW into ``<out>/baseline_seed_<s>``.
sweep.csv holds one row per run, sweep.json the per-arm mean/min/max.
"""
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from stablegrad.commands.common import add_common_args, output_dir, resolve_config
from stablegrad.commands.train import run_train
from stablegrad.core.config import ExperimentConfig
from stablegrad.utils import (
    handle_cli_errors,
    ConfigError,
    NumericalAbortError,
    log_info,
    log_success,
    log_warning,
    write_json,
    write_table,
)

METRICS = ("train_loss", "val_loss", "relative_l2")
SWEEP_COLUMNS = ["arm", "seed", "status", *METRICS]


def _run_arm(cfg: ExperimentConfig, arm: str, seed: int, out_dir: Path) -> Dict[str, Any]:
    d = cfg.to_dict()
    d["seed"] = seed
    run_cfg = ExperimentConfig.from_dict(d)
    if arm == "baseline":
        run_cfg = run_cfg.with_preprocessor("none")
    row: Dict[str, Any] = {"arm": arm, "seed": seed, "status": "ok", **{m: None for m in METRICS}}
    try:
        result = run_train(run_cfg, out_dir)
    except NumericalAbortError as e:
        log_warning(f"{arm} seed {seed} aborted: {e}")
        row["status"] = "aborted"
        return row
    row.update({m: result.summary.get(m) for m in METRICS})
    return row


def aggregate(rows: List[Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
    """Per-arm mean/min/max of every metric over the runs that finished."""
    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    out: Dict[str, Dict[str, Any]] = {}
    for arm, group in frame.groupby("arm", sort=False):
        done = group[group["status"] == "ok"]
        stats: Dict[str, Any] = {"runs": int(len(group)), "finished": int(len(done))}
        for metric in METRICS:
            values = pd.to_numeric(done[metric], errors="coerce").dropna()
            if values.empty:
                stats[metric] = None
                continue
            stats[metric] = {"mean": float(values.mean()), "min": float(values.min()), "max": float(values.max())}
        out[str(arm)] = stats
    return out


def run_seed_sweep(
    cfg: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
    baseline: bool = False,
    out_dir: Optional[Path] = None,
) -> Dict[str, Dict[str, Any]]:
    seeds = list(seeds if seeds is not None else cfg.sweep_seeds)
    if not seeds:
        raise ConfigError("seed sweep needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")
    out_dir = Path(out_dir) if out_dir is not None else output_dir(cfg)
    arms = ["stablegrad", "baseline"] if baseline else ["stablegrad"]

    rows = []
    for seed in seeds:
        for arm in arms:
            sub = f"seed_{seed}" if arm == "stablegrad" else f"baseline_seed_{seed}"
            log_info(f"{arm} seed {seed}")
            rows.append(_run_arm(cfg, arm, seed, out_dir / sub))

    summary = aggregate(rows)
    write_table(out_dir / "sweep.csv", rows, SWEEP_COLUMNS)
    write_json(out_dir / "sweep.json", {"seeds": seeds, "arms": summary})
    for arm, stats in summary.items():
        rel = stats.get("relative_l2")
        if rel is not None:
            log_info(f"{arm}: relative L2 mean {rel['mean']:.4e} (min {rel['min']:.4e}, max {rel['max']:.4e})")
    log_success(f"{len(rows)} run(s) aggregated in {out_dir / 'sweep.json'}")
    return summary


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad seed-sweep',
        description='Run the configured experiment over several seeds and aggregate',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad seed-sweep --preset burgers-desk --seeds 0 1 2 --baseline
  stablegrad seed-sweep --preset poisson-desk --steps-override 500
'''
    )
    add_common_args(parser)
    parser.add_argument('--seeds', type=int, nargs='+', default=None, help='Seeds (default: sweep_seeds)')
    parser.add_argument('--baseline', action='store_true', help='Also train each seed without preprocessing')
    args = parser.parse_args(argv)
    cfg = resolve_config(args)
    run_seed_sweep(cfg, args.seeds, args.baseline, output_dir(cfg))
    return 0


if __name__ == '__main__':
    main()
