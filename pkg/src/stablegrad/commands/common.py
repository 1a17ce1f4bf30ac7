"""Arguments and config resolution shared by the experiment commands."""
import argparse
from pathlib import Path
from typing import Optional

from stablegrad.core.config import PRESETS, ExperimentConfig, load_config
from stablegrad.utils import set_verbosity


def add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='Experiment config file (JSON, or YAML by suffix)')
    parser.add_argument('--preset', choices=sorted(PRESETS), help='Named preset applied before the config file')
    parser.add_argument('--seed', type=int, default=None, help='Run seed (overrides config)')
    parser.add_argument('--out', default=None, help='Output directory (overrides output.dir)')
    parser.add_argument('--steps-override', type=int, default=None,
                        help='Total training steps, split across phases in proportion')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config value by dot path (repeatable)')
    parser.add_argument('-q', '--quiet', action='store_true', help='Only print warnings and errors')
    parser.add_argument('--debug', action='store_true', help='Print debug output')


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Build the run config from parsed arguments and apply verbosity."""
    set_verbosity(quiet=args.quiet, debug=args.debug)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    cfg = load_config(args.config, args.preset, overrides)
    if args.steps_override is not None:
        cfg = cfg.with_total_steps(args.steps_override)
    return cfg


def output_dir(cfg: ExperimentConfig, sub: Optional[str] = None) -> Path:
    path = Path(cfg.output.dir)
    if sub:
        path = path / sub
    path.mkdir(parents=True, exist_ok=True)
    return path
