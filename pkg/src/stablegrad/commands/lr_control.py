#!/usr/bin/env python3
"""
lr-control - Is StableGrad just a larger learning rate?

Trains three arms from the same seed at a constant base learning rate:
plain AdamW, AdamW boosted by a piecewise spectral multiplier table, and
AdamW + StableGrad. Reports final losses and how each arm's last update is
spread across parameter blocks.
"""
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from stablegrad.commands.common import add_common_args, output_dir, resolve_config
from stablegrad.commands.train import RunResult, run_train
from stablegrad.core.config import ExperimentConfig
from stablegrad.core.diagnostics import update_geometry
from stablegrad.utils import (
    handle_cli_errors,
    log_info,
    log_success,
    log_warning,
    write_json,
    write_table,
)

ARMS = ("adamw", "adamw_boosted", "stablegrad")

REPORT_COLUMNS = [
    "arm", "train_loss", "val_loss", "relative_l2",
    "valid_relative_update_ratio", "max_energy_concentration", "valid_blocks",
]


def arm_config(cfg: ExperimentConfig, arm: str, table: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    d = cfg.to_dict()
    preprocessor = "stablegrad" if arm == "stablegrad" else "none"
    for phase in d["phases"]:
        phase["preprocessor"] = preprocessor
    d["optimizer"]["schedule"] = "piecewise_multiplier" if arm == "adamw_boosted" else "constant"
    if arm == "adamw_boosted" and table is not None:
        d["optimizer"]["multiplier_table"] = str(table)
    return ExperimentConfig.from_dict(d)


def arm_report(arm: str, result: RunResult, block_mode: str) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "arm": arm,
        "train_loss": result.summary.get("train_loss"),
        "val_loss": result.summary.get("val_loss"),
        "relative_l2": result.summary.get("relative_l2"),
        "valid_relative_update_ratio": None,
        "max_energy_concentration": None,
        "valid_blocks": None,
    }
    trainer = result.trainer
    if trainer.last_update is not None:
        geometry = update_geometry(
            trainer.last_params, trainer.last_update, trainer.net.layout.block_slices(block_mode)
        )
        row.update({
            "valid_relative_update_ratio": geometry.valid_relative_update_ratio,
            "max_energy_concentration": geometry.max_energy_concentration,
            "valid_blocks": geometry.valid_blocks,
        })
    return row


def run_lr_control(
    cfg: ExperimentConfig,
    table: Optional[Union[str, Path]] = None,
    out_dir: Optional[Path] = None,
) -> List[Dict[str, Any]]:
    """Train every arm into ``<out>/<arm>`` and write lr_control.csv / lr_control.json."""
    out_dir = Path(out_dir) if out_dir is not None else output_dir(cfg)
    rows = []
    for arm in ARMS:
        log_info(f"arm {arm}")
        result = run_train(arm_config(cfg, arm, table), out_dir / arm)
        rows.append(arm_report(arm, result, cfg.stablegrad.block_mode))
    write_table(out_dir / "lr_control.csv", rows, REPORT_COLUMNS)
    write_json(out_dir / "lr_control.json", {"arms": rows})

    by_arm = {r["arm"]: r for r in rows}
    plain, boosted, sg = by_arm["adamw"], by_arm["adamw_boosted"], by_arm["stablegrad"]
    if None not in (plain["train_loss"], boosted["train_loss"], sg["train_loss"]):
        log_info(
            f"final train loss: adamw {plain['train_loss']:.4e}, boosted {boosted['train_loss']:.4e}, "
            f"stablegrad {sg['train_loss']:.4e}"
        )
    else:
        log_warning("no training steps were run; losses are at initialization")
    log_success(f"report written to {out_dir / 'lr_control.csv'}")
    return rows


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad lr-control',
        description='Compare plain AdamW, spectrally boosted AdamW and AdamW + StableGrad',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad lr-control --preset burgers-desk --out runs/lr-control
  stablegrad lr-control --table runs/diag/lr_multipliers.csv
'''
    )
    add_common_args(parser)
    parser.add_argument('--table', default=None,
                        help='Multiplier table CSV (start_epoch,end_epoch,multiplier); default: bundled table')
    args = parser.parse_args(argv)
    cfg = resolve_config(args)
    run_lr_control(cfg, args.table, output_dir(cfg))
    return 0


if __name__ == '__main__':
    main()
