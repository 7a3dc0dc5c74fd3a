"""
Exception hierarchy shared by every stage of the style search pipeline.

The CLI maps ConfigurationError, ValidationError and ModelFormatError to exit
code 2 and any other StyleSearchError to exit code 1.
"""

from typing import Optional


class StyleSearchError(Exception):
    """Base class for all pipeline errors."""
    pass


class ConfigurationError(StyleSearchError):
    """Configuration-related errors."""
    pass


class ValidationError(StyleSearchError):
    """Input data validation errors."""
    pass


class DimensionMismatchError(ValidationError):
    """Vector or matrix shapes that do not line up."""

    def __init__(self, what: str, expected: object, actual: object):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class FitnessRangeError(ValidationError):
    """Fitness function returned a value outside [0, 1]."""
    pass


class ModelFormatError(StyleSearchError):
    """Unreadable or inconsistent style-model file."""
    pass


class FitError(StyleSearchError):
    """Numerical failure while fitting a model."""
    pass


class ExportError(StyleSearchError):
    """I/O failure while writing an artifact."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)
