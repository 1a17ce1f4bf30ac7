#!/usr/bin/env python3
"""
stablegrad config - Inspect and write experiment configurations.

Usage:
    stablegrad config show [--preset P] [--config F]   Display the resolved configuration
    stablegrad config get <key>                        Get a specific config value
    stablegrad config init [path]                      Write the resolved configuration to a file
    stablegrad config list-keys                        List all config keys
    stablegrad config presets                          List named presets
"""
import argparse
import json
import sys
from pathlib import Path

from stablegrad.core.config import (
    DEFAULT_CONFIG,
    PRESETS,
    ExperimentConfig,
    get_path,
    list_keys,
    resolve_config_dict,
    save_config,
)
from stablegrad.utils import (
    handle_cli_errors,
    ConfigError,
    FileOperationError,
    log_success,
)

_MISSING = object()


def _resolved(args) -> dict:
    d = resolve_config_dict(args.config, args.preset, args.overrides)
    # Validate before printing anything.
    ExperimentConfig.from_dict(d)
    return d


def cmd_show(args):
    """Display the resolved configuration."""
    print(json.dumps(_resolved(args), indent=2, ensure_ascii=False))


def cmd_get(args):
    """Get a specific config value."""
    value = get_path(_resolved(args), args.key, _MISSING)
    if value is _MISSING:
        raise ConfigError(f"Key not found: {args.key}")
    if isinstance(value, (dict, list)):
        print(json.dumps(value, indent=2, ensure_ascii=False))
    else:
        print(value)


def cmd_init(args):
    """Write the resolved configuration to a file."""
    path = Path(args.path)
    if path.exists() and not args.force:
        raise FileOperationError(f"Config already exists at {path}. Use --force to overwrite.")
    save_config(_resolved(args), path)
    log_success(f"Created config at {path}")


def cmd_list_keys(args):
    """List all available config keys."""
    for key in sorted(list_keys(DEFAULT_CONFIG)):
        print(key)


def cmd_presets(args):
    """List named presets and what they change."""
    for name in sorted(PRESETS):
        changed = sorted(list_keys(PRESETS[name])) or ["(defaults)"]
        print(f"{name}: {', '.join(changed)}")


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad config',
        description='Inspect and write stablegrad experiment configurations',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad config show --preset helmholtz-desk
  stablegrad config get optimizer.lr --preset helmholtz-full
  stablegrad config init exp.yaml --preset burgers-desk --set problem.nu=0.01
  stablegrad config list-keys

Keys use dot notation: optimizer.lr, problem.nu, stablegrad.block_mode, etc.
'''
    )
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', help='Config file to merge (JSON, or YAML by suffix)')
    parent.add_argument('--preset', choices=sorted(PRESETS), help='Named preset')
    parent.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config value by dot path (repeatable)')

    subparsers = parser.add_subparsers(dest='command', help='Commands')

    # show
    subparsers.add_parser('show', parents=[parent], help='Display the resolved configuration')

    # get
    get_parser = subparsers.add_parser('get', parents=[parent], help='Get a specific config value')
    get_parser.add_argument('key', help='Config key (dot notation)')

    # init
    init_parser = subparsers.add_parser('init', parents=[parent], help='Write the resolved configuration')
    init_parser.add_argument('path', nargs='?', default='stablegrad.json', help='Target file (default: stablegrad.json)')
    init_parser.add_argument('--force', '-f', action='store_true', help='Overwrite an existing file')

    # list-keys
    subparsers.add_parser('list-keys', help='List all available config keys')

    # presets
    subparsers.add_parser('presets', help='List named presets')

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        sys.exit(0)

    commands = {
        'show': cmd_show,
        'get': cmd_get,
        'init': cmd_init,
        'list-keys': cmd_list_keys,
        'presets': cmd_presets,
    }

    commands[args.command](args)
    return 0


if __name__ == '__main__':
    main()
