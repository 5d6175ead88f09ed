"""
Exception types for wrflow.

All input problems are still ``ValueError`` subclasses, so callers that
only catch ``ValueError`` keep working.
"""

from typing import Any, Dict, Optional


class WrflowError(Exception):
    """Base class for wrflow errors."""


class ShapeError(WrflowError, ValueError):
    """Operand shapes do not conform for a primitive or model input."""


class ConfigError(WrflowError, ValueError):
    """Invalid configuration value, naming the section and key."""

    def __init__(self, section: str, key: str, message: str):
        self.section = section
        self.key = key
        super().__init__(f"{section}.{key}: {message}")


class NumericError(WrflowError, ArithmeticError):
    """Non-finite loss or failed numerical verification."""

    def __init__(self, message: str, provenance: Optional[Dict[str, Any]] = None):
        self.provenance = dict(provenance or {})
        if self.provenance:
            where = ", ".join(f"{k}={v}" for k, v in self.provenance.items())
            message = f"{message} ({where})"
        super().__init__(message)
