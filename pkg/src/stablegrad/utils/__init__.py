"""Utility modules for stablegrad."""

from stablegrad.utils.logging import (
    set_verbosity,
    log_info,
    log_success,
    log_warning,
    log_error,
    log_debug,
)
from stablegrad.utils.exceptions import (
    StableGradError,
    ConfigError,
    ShapeError,
    DomainError,
    ContractError,
    ConvergenceError,
    NumericalOverflowError,
    NonFiniteGradientError,
    NumericalAbortError,
    ReferenceFormatError,
    FileOperationError,
)
from stablegrad.utils.error_handling import (
    cli_error_handler,
    handle_cli_errors,
)
from stablegrad.utils.metrics import (
    MetricsWriter,
    read_jsonl,
    write_json,
    write_table,
    read_table,
)

__all__ = [
    # Logging functions
    'set_verbosity',
    'log_info',
    'log_success',
    'log_warning',
    'log_error',
    'log_debug',
    # Exceptions
    'StableGradError',
    'ConfigError',
    'ShapeError',
    'DomainError',
    'ContractError',
    'ConvergenceError',
    'NumericalOverflowError',
    'NonFiniteGradientError',
    'NumericalAbortError',
    'ReferenceFormatError',
    'FileOperationError',
    # Error handling
    'cli_error_handler',
    'handle_cli_errors',
    # Metrics files
    'MetricsWriter',
    'read_jsonl',
    'write_json',
    'write_table',
    'read_table',
]
