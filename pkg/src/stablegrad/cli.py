#!/usr/bin/env python3
"""
stablegrad - Layer-wise gradient rescaling for PINN training.

Usage:
    stablegrad <command> [options]

Each command lives in stablegrad.commands and exposes ``main(argv)``.
"""
import importlib
import sys

from stablegrad import __version__

COMMANDS = {
    'train': ('stablegrad.commands.train', 'Train a PINN with the configured optimizer phases'),
    'diagnose': ('stablegrad.commands.diagnose', 'Kernel diagnostics along a training run'),
    'scaleflow': ('stablegrad.commands.scaleflow', 'Per-layer scale curves across depth'),
    'lr-control': ('stablegrad.commands.lr_control', 'StableGrad vs. a spectrally boosted learning rate'),
    'export-ref': ('stablegrad.commands.export_ref', 'Export a reference solution file'),
    'seed-sweep': ('stablegrad.commands.seed_sweep', 'Repeat a run over seeds and aggregate'),
    'config': ('stablegrad.commands.config_cli', 'Inspect and write experiment configurations'),
}


def usage() -> str:
    width = max(len(name) for name in COMMANDS)
    lines = [f"stablegrad {__version__}", "", "Usage: stablegrad <command> [options]", "", "Commands:"]
    lines += [f"  {name.ljust(width)}  {help_text}" for name, (_, help_text) in COMMANDS.items()]
    lines += ["", "Run 'stablegrad <command> --help' for command options."]
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ('-h', '--help', 'help'):
        print(usage())
        return 0
    if argv[0] in ('-V', '--version'):
        print(__version__)
        return 0
    name, rest = argv[0], argv[1:]
    if name not in COMMANDS:
        print(f"Unknown command: {name}\n", file=sys.stderr)
        print(usage(), file=sys.stderr)
        return 2
    module = importlib.import_module(COMMANDS[name][0])
    return module.main(rest) or 0


if __name__ == '__main__':
    sys.exit(main())
