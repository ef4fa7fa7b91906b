"""Exception hierarchy shared across the package.

Every error subclasses both LFDiffError and a matching builtin, so callers
can catch either the package root or the natural Python category.
"""


class LFDiffError(Exception):
    """Root of all package-specific errors."""


class DomainError(LFDiffError, ValueError):
    """Input values outside the mathematical domain of an operation."""


class ShapeError(LFDiffError, ValueError):
    """Tensor shapes incompatible with an operation's contract."""


class FormatError(LFDiffError, ValueError):
    """Malformed or corrupted file content."""


class ConfigError(LFDiffError, ValueError):
    """Invalid configuration value or combination."""


class GenerationError(LFDiffError, RuntimeError):
    """Synthetic scene generation could not satisfy the requested spec."""


class DataError(LFDiffError, ValueError):
    """Dataset content missing or inconsistent (e.g. absent ground truth)."""


class CheckpointError(LFDiffError, RuntimeError):
    """Checkpoint missing, version-incompatible, or shape-mismatched."""
