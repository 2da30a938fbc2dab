"""
Evaluation counter module for tracking forward-model evaluations.

This module provides thread-local context management to identify which run
is making forward or gradient calls, allowing proper per-run counting of
solver and surrogate evaluations.
"""

import threading
from typing import Dict, Optional

# Thread-local storage for run context
_local_context = threading.local()
_lock = threading.Lock()

# Shared counters: "<run_id>/<kind>" -> count
_counters: Dict[str, int] = {}


def set_run_context(run_id: str) -> None:
    """
    Set the current run context for evaluation counting.

    Args:
        run_id: The ID of the run making evaluations
    """
    _local_context.run_id = run_id


def clear_run_context() -> None:
    """
    Clear the current run context.
    """
    if hasattr(_local_context, "run_id"):
        delattr(_local_context, "run_id")


def get_run_context() -> Optional[str]:
    """
    Get the current run context.

    Returns:
        The current run ID, or None if not set
    """
    return getattr(_local_context, "run_id", None)


def increment_evaluation(kind: str) -> None:
    """
    Increment the counter of `kind` ('forward', 'gradient' or 'surrogate') for the current run.

    Called by every backend evaluation; a no-op outside a run context.
    """
    run_id = get_run_context()
    if run_id is None:
        return
    key = f"{run_id}/{kind}"
    with _lock:
        _counters[key] = _counters.get(key, 0) + 1


def get_evaluation_count(run_id: str, kind: str) -> int:
    """
    Get the evaluation count of `kind` for a specific run.

    Returns:
        The count, or 0 if nothing was recorded
    """
    with _lock:
        return _counters.get(f"{run_id}/{kind}", 0)


def reset_counters(run_id: Optional[str] = None) -> None:
    """Drop the counters of one run, or of every run when run_id is None."""
    with _lock:
        if run_id is None:
            _counters.clear()
            return
        for key in [k for k in _counters if k.startswith(f"{run_id}/")]:
            del _counters[key]
