"""
Centralized error handling for the mean-reflected BSDE solver

This module provides:
- Categorized solver exceptions (Skorokhod, measure, regression, Picard, config, I/O)
- Error history with recovery suggestions
- Severity-aware logging
- A decorator used by the command-line front end to convert failures into exit codes
"""

import logging
import traceback
from typing import Optional, Callable, Dict, Any, List
from enum import Enum
from datetime import datetime
from dataclasses import dataclass, field
import functools


class ErrorSeverity(Enum):
    """Error severity levels"""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error categories for better handling"""
    SYSTEM = "system"
    SKOROKHOD = "skorokhod"
    MEASURE = "measure"
    REGRESSION = "regression"
    PICARD = "picard"
    CONFIG = "config"
    FILE_IO = "file_io"


@dataclass
class ErrorInfo:
    """Error information container"""
    category: ErrorCategory
    severity: ErrorSeverity
    message: str
    technical_details: str
    recovery_suggestions: List[str]
    timestamp: datetime
    context: Optional[Dict[str, Any]] = None


class SolverError(Exception):
    """Base class of every error raised by the solver modules."""

    category: ErrorCategory = ErrorCategory.SYSTEM

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}


class GapViolation(SolverError):
    """Both constraints fire at one node; the constraint pair has no positive gap there."""
    category = ErrorCategory.SKOROKHOD


class RootBracketFailure(SolverError):
    """A monotone root could not be bracketed or resolved to tolerance."""
    category = ErrorCategory.SKOROKHOD


class DimensionMismatch(SolverError):
    """Measures have incompatible dimension or sample count."""
    category = ErrorCategory.MEASURE


class RegressionSingular(SolverError):
    """Least-squares design matrix is rank deficient."""
    category = ErrorCategory.REGRESSION


class NonFiniteValue(SolverError):
    """A backward iterate produced NaN or infinite values."""
    category = ErrorCategory.REGRESSION


class EnsembleMismatch(SolverError):
    """Two solutions were not produced on the same Brownian ensemble."""
    category = ErrorCategory.REGRESSION


class PicardNotConverged(SolverError):
    """Picard iteration hit its iteration cap before reaching tolerance."""
    category = ErrorCategory.PICARD

    def __init__(self, message: str, history: List[float], context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.history = list(history)


class ConfigError(SolverError):
    """Invalid scenario configuration (unknown key, bad value, bad range)."""
    category = ErrorCategory.CONFIG


class ParseError(SolverError):
    """Malformed exported artifact."""
    category = ErrorCategory.FILE_IO


class ErrorHandler:
    """Centralized error handling system"""

    def __init__(self, max_history: int = 100):
        self.logger = logging.getLogger(__name__)
        self.error_history: List[ErrorInfo] = []
        self.max_history = max_history

        # Recovery hints per category
        self.error_templates = {
            ErrorCategory.SKOROKHOD: {
                "title": "Skorokhod Problem Error",
                "default_recovery": [
                    "Check that both constraint functions are strictly increasing",
                    "Check that r - l stays above a positive gap",
                    "Lower the declared lower bi-Lipschitz constant c"
                ]
            },
            ErrorCategory.MEASURE: {
                "title": "Empirical Measure Error",
                "default_recovery": [
                    "Use one-dimensional samples for measure-to-measure distances",
                    "Use equal particle counts for both measures"
                ]
            },
            ErrorCategory.REGRESSION: {
                "title": "Regression Error",
                "default_recovery": [
                    "Lower basis_degree or raise the particle count N",
                    "Check the generator for explosive growth",
                    "Solve both problems on the same seed and grid"
                ]
            },
            ErrorCategory.PICARD: {
                "title": "Picard Iteration Error",
                "default_recovery": [
                    "Raise max_picard_iters",
                    "Relax picard_tol",
                    "Inspect the Picard history for oscillation"
                ]
            },
            ErrorCategory.CONFIG: {
                "title": "Configuration Error",
                "default_recovery": [
                    "Check key names against the scenario catalog",
                    "Check numeric ranges (N >= 2, n_steps >= 2, tolerances > 0)"
                ]
            },
            ErrorCategory.FILE_IO: {
                "title": "File Error",
                "default_recovery": [
                    "Re-run the scenario to regenerate the exports",
                    "Check file permissions and the output directory"
                ]
            },
            ErrorCategory.SYSTEM: {
                "title": "System Error",
                "default_recovery": [
                    "Re-run with --verbose for a full traceback"
                ]
            }
        }

    def handle_error(self,
                     error: Exception,
                     category: Optional[ErrorCategory] = None,
                     severity: ErrorSeverity = ErrorSeverity.ERROR,
                     context: Optional[Dict[str, Any]] = None,
                     custom_message: Optional[str] = None) -> ErrorInfo:
        """
        Record and log an error

        Args:
            error: The exception that occurred
            category: Error category; inferred from SolverError subclasses when omitted
            severity: Error severity level
            context: Additional context information
            custom_message: Replacement for the exception text in the log

        Returns:
            ErrorInfo object with error details
        """
        if category is None:
            category = getattr(error, "category", ErrorCategory.SYSTEM)
        merged_context = dict(getattr(error, "context", {}) or {})
        if context:
            merged_context.update(context)

        error_info = ErrorInfo(
            category=category,
            severity=severity,
            message=custom_message or str(error),
            technical_details=f"{type(error).__name__}: {error}",
            recovery_suggestions=self._get_recovery_suggestions(category),
            timestamp=datetime.now(),
            context=merged_context or None
        )

        self._log_error(error_info, error)
        self._add_to_history(error_info)
        return error_info

    def handle_warning(self,
                       message: str,
                       category: ErrorCategory = ErrorCategory.SYSTEM,
                       context: Optional[Dict[str, Any]] = None) -> ErrorInfo:
        """Handle a warning message"""
        error_info = ErrorInfo(
            category=category,
            severity=ErrorSeverity.WARNING,
            message=message,
            technical_details="",
            recovery_suggestions=[],
            timestamp=datetime.now(),
            context=context
        )

        self._log_error(error_info)
        self._add_to_history(error_info)
        return error_info

    def _get_recovery_suggestions(self, category: ErrorCategory) -> List[str]:
        """Get recovery suggestions for error category"""
        template = self.error_templates.get(category, self.error_templates[ErrorCategory.SYSTEM])
        return list(template["default_recovery"])[:5]

    def _log_error(self, error_info: ErrorInfo, exception: Optional[Exception] = None):
        """Log error to logging system"""
        log_message = f"[{error_info.category.value}] {error_info.message}"

        if error_info.context:
            log_message += f" | Context: {error_info.context}"

        if error_info.severity == ErrorSeverity.CRITICAL:
            self.logger.critical(log_message)
            if exception:
                self.logger.debug("".join(traceback.format_exception(type(exception), exception, exception.__traceback__)))
        elif error_info.severity == ErrorSeverity.ERROR:
            self.logger.error(log_message)
            for hint in error_info.recovery_suggestions:
                self.logger.info(f"  hint: {hint}")
            if exception:
                self.logger.debug("".join(traceback.format_exception(type(exception), exception, exception.__traceback__)))
        elif error_info.severity == ErrorSeverity.WARNING:
            self.logger.warning(log_message)
        else:
            self.logger.info(log_message)

    def _add_to_history(self, error_info: ErrorInfo):
        """Add error to history"""
        self.error_history.append(error_info)

        if len(self.error_history) > self.max_history:
            self.error_history = self.error_history[-self.max_history:]

    def get_error_history(self) -> List[ErrorInfo]:
        """Get error history"""
        return self.error_history.copy()

    def clear_error_history(self):
        """Clear error history"""
        self.error_history.clear()


def exit_code_for(error: Exception) -> int:
    """Map an exception onto the CLI exit status: 2 for input problems, 1 otherwise."""
    if isinstance(error, (ConfigError, ParseError)):
        return 2
    return 1


def handle_errors(error_handler: Optional[ErrorHandler] = None,
                  severity: ErrorSeverity = ErrorSeverity.ERROR):
    """
    Decorator for command functions: logs any exception and returns its exit status

    Args:
        error_handler: Handler that records the failure; a fresh one is used when omitted
        severity: Severity used for solver errors (unexpected exceptions are CRITICAL)
    """
    def decorator(func: Callable[..., int]) -> Callable[..., int]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> int:
            handler = error_handler or ErrorHandler()
            try:
                return func(*args, **kwargs)
            except SolverError as e:
                handler.handle_error(e, severity=severity, context={"command": func.__name__})
                return exit_code_for(e)
            except Exception as e:
                handler.handle_error(
                    e, ErrorCategory.SYSTEM, ErrorSeverity.CRITICAL,
                    context={"command": func.__name__}
                )
                return 1
        return wrapper
    return decorator
