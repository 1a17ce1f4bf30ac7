"""Turn stablegrad errors into process exit codes.

Configuration problems exit 2, numeric aborts 3, any other StableGradError 1
and Ctrl-C 130. Exceptions outside the hierarchy propagate unchanged.
"""
import sys
from contextlib import contextmanager
from functools import wraps
from typing import Callable, Iterator, TypeVar

from stablegrad.utils.exceptions import NumericalAbortError, StableGradError
from stablegrad.utils.logging import log_debug, log_error, log_warning

F = TypeVar('F', bound=Callable)

INTERRUPTED = 130


def _report(e: StableGradError) -> None:
    log_error(str(e))
    if isinstance(e, NumericalAbortError) and e.record:
        log_debug(f"abort record: {e.record}")


@contextmanager
def cli_error_handler() -> Iterator[None]:
    """Exit with the error's ``exit_code``.

    Usage:
        with cli_error_handler():
            cfg = load_config(path, preset, overrides)
            run_train(cfg)
    """
    try:
        yield
    except StableGradError as e:
        _report(e)
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        log_warning("Aborted.")
        sys.exit(INTERRUPTED)


def handle_cli_errors(func: F) -> F:
    """``cli_error_handler`` around a command's ``main``."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        with cli_error_handler():
            return func(*args, **kwargs)
    return wrapper  # type: ignore
