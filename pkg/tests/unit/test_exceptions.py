"""Unit tests for stablegrad.utils.exceptions module."""
import pytest

from stablegrad.utils.exceptions import (
    ConfigError,
    ContractError,
    ConvergenceError,
    DomainError,
    FileOperationError,
    NonFiniteGradientError,
    NumericalAbortError,
    NumericalOverflowError,
    ReferenceFormatError,
    ShapeError,
    StableGradError,
)

ALL = [
    ConfigError,
    ContractError,
    ConvergenceError,
    DomainError,
    FileOperationError,
    NonFiniteGradientError,
    NumericalAbortError,
    NumericalOverflowError,
    ReferenceFormatError,
    ShapeError,
]


class TestExceptionHierarchy:
    """Tests for exception class hierarchy."""

    def test_base_is_exception(self):
        """StableGradError inherits from Exception."""
        assert issubclass(StableGradError, Exception)

    @pytest.mark.parametrize("cls", ALL, ids=lambda c: c.__name__)
    def test_inherits_from_base(self, cls):
        """Every exception derives from StableGradError."""
        assert issubclass(cls, StableGradError)


class TestExitCodes:
    """Tests for the exit status carried by each class."""

    def test_config_error_is_2(self):
        """ConfigError carries exit status 2."""
        assert ConfigError.exit_code == 2

    @pytest.mark.parametrize("cls", [NumericalOverflowError, NonFiniteGradientError, NumericalAbortError],
                             ids=lambda c: c.__name__)
    def test_numeric_errors_are_3(self, cls):
        """Numerical failures carry exit status 3."""
        assert cls.exit_code == 3

    @pytest.mark.parametrize("cls", [StableGradError, ShapeError, DomainError, ContractError, FileOperationError],
                             ids=lambda c: c.__name__)
    def test_others_are_1(self, cls):
        """Remaining errors carry exit status 1."""
        assert cls.exit_code == 1


class TestExceptionPayloads:
    """Tests for the extra fields some exceptions carry."""

    def test_raise_with_message(self):
        """StableGradError can be raised with message."""
        with pytest.raises(StableGradError) as exc_info:
            raise ConfigError("Invalid configuration")
        assert "Invalid configuration" in str(exc_info.value)

    def test_convergence_keeps_estimate(self):
        """ConvergenceError keeps the last estimate."""
        e = ConvergenceError("slow", estimate=2.5, iterations=100)
        assert e.estimate == 2.5
        assert e.iterations == 100

    def test_overflow_layer_index(self):
        """NumericalOverflowError keeps the layer index."""
        assert NumericalOverflowError("boom", layer_index=4).layer_index == 4

    def test_non_finite_block_index(self):
        """NonFiniteGradientError keeps the block index."""
        assert NonFiniteGradientError("nan", block_index=2).block_index == 2

    def test_abort_record_defaults_to_empty(self):
        """NumericalAbortError record defaults to an empty dict."""
        assert NumericalAbortError("nan loss").record == {}
        assert NumericalAbortError("nan loss", {"step": 3}).record == {"step": 3}

    def test_reference_format_offset_in_message(self):
        """ReferenceFormatError appends the byte offset."""
        e = ReferenceFormatError("bad magic", 0)
        assert e.byte_offset == 0
        assert str(e) == "bad magic (at byte 0)"

    def test_catch_base_class(self):
        """Catching StableGradError catches all subclasses."""
        for cls in (ShapeError, DomainError, ContractError, FileOperationError, ConfigError):
            with pytest.raises(StableGradError):
                raise cls("Test")
