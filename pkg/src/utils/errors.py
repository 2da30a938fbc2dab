"""
Exception types raised across the toolkit.

Every message starts with "[ERROR]" so the command line can forward it to
stderr unchanged.
"""

from typing import Optional


class DomainError(ValueError):
    """Raised when an input lies outside the unit square or has the wrong shape."""


class FieldParseError(ValueError):
    """Raised when a field or parameter file is malformed."""

    def __init__(self, message: str, offset: Optional[int] = None, token: Optional[str] = None):
        where = []
        if offset is not None:
            where.append(f"offset {offset}")
        if token is not None:
            where.append(f"token {token!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"[ERROR] {message}{suffix}")
        self.offset = offset
        self.token = token


class AssemblyError(ValueError):
    """Raised when the finite-volume system cannot be assembled."""


class ConvergenceError(RuntimeError):
    """Raised when a linear solve misses its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"[ERROR] {message} (achieved relative residual {residual:.3e})")
        self.residual = residual


class NumericalError(RuntimeError):
    """Raised on factorization failures or non-finite intermediates."""


class TrainingAbortedError(RuntimeError):
    """Raised when a training or optimization loop meets a non-finite value."""

    def __init__(self, message: str, epoch: int, batch: Optional[int] = None):
        position = f"epoch {epoch}" if batch is None else f"epoch {epoch}, batch {batch}"
        super().__init__(f"[ERROR] {message} at {position}")
        self.epoch = epoch
        self.batch = batch


class MetricError(ValueError):
    """Raised when a diagnostic metric is undefined for its input."""

    def __init__(self, message: str, index: int):
        super().__init__(f"[ERROR] {message} (pair {index})")
        self.index = index


class ConfigError(ValueError):
    """Raised on unknown keys or invalid values in a run configuration."""
