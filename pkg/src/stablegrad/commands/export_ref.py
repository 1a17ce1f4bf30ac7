#!/usr/bin/env python3
"""
export-ref - Write the gridded reference solution of the configured problem.

The written file is loaded back and compared with the in-memory field.
"""
import argparse
import json
from pathlib import Path
from typing import List, Optional

import numpy as np

from stablegrad.commands.common import add_common_args, output_dir, resolve_config
from stablegrad.core.config import ExperimentConfig
from stablegrad.core.reference import GriddedField, burgers_reference, export_reference, load_reference
from stablegrad.core.residuals import reference_field
from stablegrad.utils import (
    handle_cli_errors,
    ReferenceFormatError,
    log_info,
    log_success,
)

DEFAULT_NAME = "reference.sgref"


def build_field(
    cfg: ExperimentConfig,
    resolution: Optional[List[int]] = None,
    method: Optional[str] = None,
    dt: Optional[float] = None,
) -> GriddedField:
    resolution = resolution or cfg.validation.resolution
    method = method or cfg.reference.method
    problem = cfg.problem
    if problem.kind == "burgers1d" and dt is not None:
        nx, nt = resolution
        return burgers_reference(
            problem.nu, np.linspace(-1.0, 1.0, nx), np.linspace(0.0, 1.0, nt), method, dt=dt
        )
    return reference_field(problem, resolution, method)


def run_export_ref(
    cfg: ExperimentConfig,
    path: Optional[Path] = None,
    resolution: Optional[List[int]] = None,
    method: Optional[str] = None,
    dt: Optional[float] = None,
) -> Path:
    path = Path(path) if path is not None else output_dir(cfg) / DEFAULT_NAME
    ref = build_field(cfg, resolution, method, dt)
    log_info(f"{ref.kind} reference on grid {ref.dims} ({ref.params.get('method', 'closed form')})")
    export_reference(ref, path)
    loaded = load_reference(path)
    if loaded.dims != ref.dims or not np.array_equal(loaded.values, ref.values):
        raise ReferenceFormatError("read-back does not match the written field", 0)
    log_success(f"reference written to {path}")
    return path


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad export-ref',
        description='Export the reference solution as a binary gridded file',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad export-ref --preset burgers-desk --path refs/burgers.sgref
  stablegrad export-ref --preset burgers-desk --set problem.nu=0.003 --method mol --dt 1e-5
  stablegrad export-ref --preset poisson-desk --resolution 128
'''
    )
    add_common_args(parser)
    parser.add_argument('--path', default=None, help=f'Output file (default: <out>/{DEFAULT_NAME})')
    parser.add_argument('--resolution', type=int, nargs='+', default=None,
                        help='Grid size: NX NT for Burgers, N otherwise (default: validation.resolution)')
    parser.add_argument('--method', choices=['auto', 'cole_hopf', 'mol'], default=None,
                        help='Burgers solver (default: reference.method)')
    parser.add_argument('--dt', type=float, default=None,
                        help='Method-of-lines time step (default: half the RK4 stability bound)')
    args = parser.parse_args(argv)
    if args.resolution is not None:
        args.overrides.append(f"validation.resolution={json.dumps(args.resolution)}")
    cfg = resolve_config(args)
    run_export_ref(cfg, args.path, method=args.method, dt=args.dt)
    return 0


if __name__ == '__main__':
    main()
