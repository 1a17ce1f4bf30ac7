"""Centralized logging utilities for stablegrad.

Provides consistent colored output for all commands. Messages are rendered as
plain text, never as rich markup, so brackets in values are printed verbatim.
"""
from rich.console import Console
from rich.text import Text

_stdout = Console(highlight=False, soft_wrap=True)
_stderr = Console(stderr=True, highlight=False, soft_wrap=True)

_quiet = False
_debug = False


def set_verbosity(quiet: bool = False, debug: bool = False) -> None:
    """Silence info/success output (quiet) or enable debug output."""
    global _quiet, _debug
    _quiet = quiet
    _debug = debug


def _emit(console: Console, tag: str, style: str, msg: str) -> None:
    console.print(Text.assemble((tag, style), " ", str(msg)))


def log_info(msg: str) -> None:
    """Print an info message in blue."""
    if not _quiet:
        _emit(_stdout, "[INFO]", "blue", msg)


def log_success(msg: str) -> None:
    """Print a success message in green."""
    if not _quiet:
        _emit(_stdout, "[SUCCESS]", "green", msg)


def log_warning(msg: str) -> None:
    """Print a warning message in yellow."""
    _emit(_stdout, "[WARNING]", "yellow", msg)


def log_error(msg: str) -> None:
    """Print an error message in red to stderr."""
    _emit(_stderr, "[ERROR]", "red", msg)


def log_debug(msg: str) -> None:
    """Print a debug message in cyan (only when debug output is on)."""
    if _debug:
        _emit(_stdout, "[DEBUG]", "cyan", msg)
