#!/usr/bin/env python3
"""
Tests for error categories, history and the command decorator
"""

import sys
import os

import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.error_handler import (ConfigError, ErrorCategory, ErrorHandler, ErrorSeverity, GapViolation,
                                ParseError, PicardNotConverged, RegressionSingular, SolverError,
                                exit_code_for, handle_errors)


def test_error_categories():
    """Test that solver errors carry their category and context"""
    error = GapViolation("both active", {"k": 3})
    assert isinstance(error, SolverError)
    assert error.category == ErrorCategory.SKOROKHOD
    assert error.context == {"k": 3}
    assert RegressionSingular("rank").category == ErrorCategory.REGRESSION
    assert PicardNotConverged("cap", [1.0, 0.5]).history == [1.0, 0.5]


def test_handle_error_records_history():
    """Test inferred category, merged context and recovery hints"""
    handler = ErrorHandler(max_history=2)
    info = handler.handle_error(ConfigError("bad N", {"N": 1}), context={"command": "run"})
    assert info.category == ErrorCategory.CONFIG
    assert info.context == {"N": 1, "command": "run"}
    assert info.recovery_suggestions
    handler.handle_warning("not monotone", ErrorCategory.PICARD)
    handler.handle_error(ValueError("plain"))
    history = handler.get_error_history()
    assert len(history) == 2
    assert history[-1].category == ErrorCategory.SYSTEM
    handler.clear_error_history()
    assert handler.get_error_history() == []


def test_exit_codes():
    """Test 2 for input problems and 1 for solver failures"""
    assert exit_code_for(ConfigError("x")) == 2
    assert exit_code_for(ParseError("x")) == 2
    assert exit_code_for(PicardNotConverged("x", [])) == 1
    assert exit_code_for(RuntimeError("x")) == 1


def test_handle_errors_decorator():
    """Test return passthrough and failure conversion"""
    handler = ErrorHandler()

    @handle_errors(handler)
    def ok():
        return 0

    @handle_errors(handler)
    def bad_config():
        raise ConfigError("unknown key")

    @handle_errors(handler, severity=ErrorSeverity.WARNING)
    def crash():
        raise KeyError("boom")

    assert ok() == 0
    assert bad_config() == 2
    assert crash() == 1
    severities = [info.severity for info in handler.get_error_history()]
    assert severities == [ErrorSeverity.ERROR, ErrorSeverity.CRITICAL]
    assert ok.__name__ == "ok"


def test_decorator_without_handler():
    """Test that a fresh handler is used when none is given"""
    @handle_errors()
    def parse():
        raise ParseError("truncated")

    assert parse() == 2
