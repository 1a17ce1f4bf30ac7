#!/usr/bin/env python3
"""
scaleflow - Forward/backward scale curves across depth.

For each panel (initializer x normalizer x preprocessor) a seeded random
network is probed on a Gaussian batch and the per-layer activation std,
adjoint std and weight-gradient std (raw and post-processed) are written to
scaleflow_<panel>.csv.
"""
import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from stablegrad.core.linalg import SeededRng
from stablegrad.core.network import Initializer, MlpNetwork, ScaleProfile, initialize, scale_probe
from stablegrad.core.optimizers import PREPROCESSORS, StableGradConfig, sign_rescale, stablegrad_rescale
from stablegrad.utils import (
    handle_cli_errors,
    ConfigError,
    log_info,
    log_success,
    set_verbosity,
    write_table,
)

PROFILE_COLUMNS = ["layer", "activation_std", "adjoint_std", "weight_grad_std_raw", "weight_grad_std_post"]


@dataclass(frozen=True)
class Panel:
    init: str = "fan_in"
    norm: Optional[str] = None
    preprocessor: str = "none"


PANELS: Dict[str, Panel] = {
    "fan_in": Panel("fan_in"),
    "fan_out": Panel("fan_out"),
    "batchnorm_fan_in": Panel("fan_in", "batch_norm"),
    "batchnorm_fan_out": Panel("fan_out", "batch_norm"),
    "layernorm_fan_in": Panel("fan_in", "layer_norm"),
    "layernorm_fan_out": Panel("fan_out", "layer_norm"),
    "fan_in_stablegrad": Panel("fan_in", None, "stablegrad"),
}


def _preprocessor(kind: str, cfg: StableGradConfig):
    if kind == "stablegrad":
        return lambda grads, sigma_out: stablegrad_rescale(grads, sigma_out, cfg)
    if kind == "sign":
        return lambda grads, sigma_out: sign_rescale(grads)
    return None


def run_scaleflow(
    depth: int = 20,
    width: int = 64,
    init: str = "fan_in",
    normalizer: Optional[str] = None,
    preprocessor: str = "none",
    seed: int = 0,
    batch_size: int = 256,
    activation: str = "tanh",
) -> ScaleProfile:
    """Probe a ``depth``-hidden-layer network whose input dimension equals ``width``."""
    if preprocessor not in PREPROCESSORS:
        raise ConfigError(f"unknown preprocessor '{preprocessor}', expected one of {PREPROCESSORS}")
    if depth < 1 or width < 1 or batch_size < 2:
        raise ConfigError("depth and width must be >= 1, batch size >= 2")
    rng = SeededRng(seed)
    net = MlpNetwork.build(width, 1, depth, width, activation, norm=normalizer)
    initialize(net, Initializer(init), rng.spawn(1))
    data = rng.spawn(2)
    x = data.normal((batch_size, width))
    y = data.normal((batch_size, 1))
    return scale_probe(net, x, y, _preprocessor(preprocessor, StableGradConfig()))


def profile_rows(profile: ScaleProfile) -> List[Dict[str, float]]:
    rows = profile.rows()
    for row in rows:
        row.setdefault("weight_grad_std_post", row["weight_grad_std_raw"])
    return rows


def run_panels(
    out_dir: Path,
    panels: Optional[List[str]] = None,
    depth: int = 20,
    width: int = 64,
    seed: int = 0,
    batch_size: int = 256,
) -> Dict[str, ScaleProfile]:
    out_dir = Path(out_dir)
    names = panels or list(PANELS)
    unknown = [n for n in names if n not in PANELS]
    if unknown:
        raise ConfigError(f"unknown panel(s) {unknown}, expected from {list(PANELS)}")
    profiles = {}
    for name in names:
        panel = PANELS[name]
        profile = run_scaleflow(depth, width, panel.init, panel.norm, panel.preprocessor, seed, batch_size)
        write_table(out_dir / f"scaleflow_{name}.csv", profile_rows(profile), PROFILE_COLUMNS)
        post = profile.grad_ratio(post=profile.weight_grad_std_post is not None)
        log_info(
            f"{name}: final activation std {profile.activation_std[-1]:.4g}, "
            f"grad-std ratio raw {profile.grad_ratio():.4g} / post {post:.4g}"
        )
        profiles[name] = profile
    log_success(f"{len(profiles)} panel(s) written to {out_dir}")
    return profiles


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad scaleflow',
        description='Per-layer activation, adjoint and gradient std across depth',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad scaleflow --out runs/scaleflow
  stablegrad scaleflow --panel fan_in --panel fan_in_stablegrad --depth 30
'''
    )
    parser.add_argument('--out', default='runs/scaleflow', help='Output directory')
    parser.add_argument('--panel', action='append', choices=sorted(PANELS), help='Panel to run (repeatable, default all)')
    parser.add_argument('--depth', type=int, default=20, help='Hidden layers (default: 20)')
    parser.add_argument('--width', type=int, default=64, help='Hidden width and input dimension (default: 64)')
    parser.add_argument('--batch-size', type=int, default=256, help='Probe batch size (default: 256)')
    parser.add_argument('--seed', type=int, default=0, help='Seed (default: 0)')
    parser.add_argument('-q', '--quiet', action='store_true', help='Only print warnings and errors')
    args = parser.parse_args(argv)
    set_verbosity(quiet=args.quiet)
    run_panels(Path(args.out), args.panel, args.depth, args.width, args.seed, args.batch_size)
    return 0


if __name__ == '__main__':
    main()
