"""Custom exceptions for stablegrad.

Provides a hierarchy of exceptions for consistent error handling. Every class
carries the process exit status the CLI uses when it escapes a command.
"""
from typing import Any, Dict, Optional


class StableGradError(Exception):
    """Base exception for stablegrad.

    All custom exceptions should inherit from this class.
    """
    exit_code = 1


class ConfigError(StableGradError):
    """Error in configuration.

    Raised when configuration is missing or invalid, when a numerical step bound
    is violated, or when a requested computation exceeds a configured cap.
    """
    exit_code = 2


class ShapeError(StableGradError):
    """Dimension mismatch between operands."""
    pass


class DomainError(StableGradError):
    """Input outside the domain of an operation (empty vector, zero norm, ...)."""
    pass


class ContractError(StableGradError):
    """A caller broke an operation's precondition.

    Raised for wrong network arity, missing derivative channels, or norm layers
    combined with derivative channels.
    """
    pass


class ConvergenceError(StableGradError):
    """An iterative method did not converge.

    The last estimate is kept on the exception so callers can report it.
    """

    def __init__(self, message: str, estimate: Optional[float] = None, iterations: int = 0):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations


class NumericalOverflowError(StableGradError):
    """Non-finite intermediate in the forward pass."""
    exit_code = 3

    def __init__(self, message: str, layer_index: int):
        super().__init__(message)
        self.layer_index = layer_index


class NonFiniteGradientError(StableGradError):
    """Non-finite entry in a gradient block."""
    exit_code = 3

    def __init__(self, message: str, block_index: int):
        super().__init__(message)
        self.block_index = block_index


class NumericalAbortError(StableGradError):
    """Training produced a non-finite loss.

    Carries the diagnostic record written as the last metrics line.
    """
    exit_code = 3

    def __init__(self, message: str, record: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.record = record or {}


class ReferenceFormatError(StableGradError):
    """Corrupt or inconsistent reference-field file."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte {byte_offset})")
        self.byte_offset = byte_offset


class FileOperationError(StableGradError):
    """Error in file operations.

    Raised when file read/write operations fail.
    """
    pass
