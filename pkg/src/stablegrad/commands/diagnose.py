#!/usr/bin/env python3
"""
diagnose - Train with kernel diagnostics at a fixed checkpoint cadence.

Each checkpoint row holds the validation loss, the Rayleigh quotients of K and
K_SG, the stability factor, the theorem margin, the linearization error of the
realized update and the raw/scaled gradient-std ratio.
"""
import argparse
from pathlib import Path
from typing import Optional

from stablegrad.commands.common import add_common_args, output_dir, resolve_config
from stablegrad.commands.train import DIAGNOSTICS_TABLE, RunResult, run_train
from stablegrad.core.config import ExperimentConfig
from stablegrad.core.optimizers import multiplier_frame, multipliers_from_diagnostics
from stablegrad.utils import (
    handle_cli_errors,
    ConfigError,
    log_info,
    log_success,
)

DEFAULT_EVERY = 100


def run_diagnose(
    cfg: ExperimentConfig,
    every: Optional[int] = None,
    out_dir: Optional[Path] = None,
    derive_multipliers: bool = False,
) -> RunResult:
    """Run training with diagnostics every ``every`` steps; writes table2.csv."""
    every = every or cfg.diagnostics.every or DEFAULT_EVERY
    if every < 1:
        raise ConfigError(f"checkpoint cadence must be >= 1, got {every}")
    d = cfg.to_dict()
    d["diagnostics"]["every"] = every
    cfg = ExperimentConfig.from_dict(d)
    result = run_train(cfg, out_dir)
    rows = result.diagnostics
    log_info(f"{len(rows)} checkpoint(s) written to {result.out_dir / DIAGNOSTICS_TABLE}")
    if rows:
        positive = sum(1 for r in rows if r.margin_sg > 0)
        log_info(f"margin positive at {positive}/{len(rows)} checkpoints; max s_sg {max(r.s_sg for r in rows):.4g}")
    if derive_multipliers:
        intervals = multipliers_from_diagnostics(
            [{"epoch": r.epoch, "lambda_max_k": r.lambda_max_k, "lambda_max_ksg": r.lambda_max_ksg} for r in rows]
        )
        path = result.out_dir / "lr_multipliers.csv"
        multiplier_frame(intervals).to_csv(path, index=False)
        log_success(f"spectral multipliers written to {path}")
    return result


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad diagnose',
        description='Kernel diagnostics (rho, rho_SG, s_SG, margin, E_lin, R_std) along a training run',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad diagnose --preset burgers-diagnostic --out runs/diag
  stablegrad diagnose --preset burgers-desk --every 250 --derive-multipliers
'''
    )
    add_common_args(parser)
    parser.add_argument('--every', type=int, default=None,
                        help=f'Checkpoint cadence in steps (default: config, else {DEFAULT_EVERY})')
    parser.add_argument('--derive-multipliers', action='store_true',
                        help='Also write per-interval lambda_max(K_SG)/lambda_max(K) as a multiplier table')
    args = parser.parse_args(argv)
    cfg = resolve_config(args)
    run_diagnose(cfg, args.every, output_dir(cfg), args.derive_multipliers)
    return 0


if __name__ == '__main__':
    main()
