"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (config -> 2, data -> 3,
numeric -> 4), so library code should pick the class by failure kind
rather than raising bare ValueError.
"""


class SketchFlimError(Exception):
    """Base class for all package errors."""


class ConfigError(SketchFlimError):
    """Invalid or inconsistent configuration."""


class DataError(SketchFlimError):
    """Malformed, empty, or mismatched input data."""


class NumericError(SketchFlimError):
    """Numerically degenerate situation (flat objective, singular matrix, overflow)."""
