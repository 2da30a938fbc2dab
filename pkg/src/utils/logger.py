import os
from typing import Optional


class RunLogger:
    """
    Simple logger for one pipeline component that writes to file.
    Each component has its own log file: {log_dir}/{name}.log
    """

    def __init__(self, name: str, log_dir: Optional[str] = None):
        self.name = name
        self.log_dir = log_dir if log_dir else "logs"
        self.log_file = os.path.join(self.log_dir, f"{name}.log")

        # Create log directory if it does not exist
        os.makedirs(self.log_dir, exist_ok=True)

    def log(self, message: str):
        """Writes a message to the component's log file"""
        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(f"{message}\n")

    def log_iteration(self, iteration: int, message: str):
        """Writes a message with iteration number"""
        self.log(f"Iteration {iteration}: {message}")

    def log_phase(self, phase: str, message: str = ""):
        """Writes a message of the pipeline phase"""
        if message:
            self.log(f"{phase}: {message}")
        else:
            self.log(phase)

    def log_state(self, **values: float):
        """Writes the current numeric state, e.g. log_state(elbo=..., grad_norm=...)"""
        parts = []
        for key, value in values.items():
            if isinstance(value, float):
                parts.append(f"{key}: {value:.6g}")
            else:
                parts.append(f"{key}: {value}")
        self.log(", ".join(parts))


_loggers: dict[str, RunLogger] = {}
_current_log_dir: Optional[str] = None


def set_log_dir(log_dir: Optional[str]):
    """Define the directory where subsequent loggers write"""
    global _current_log_dir
    _current_log_dir = log_dir
    # Loggers created for a previous run keep pointing at the old directory
    _loggers.clear()


def get_logger(name: str, log_dir: Optional[str] = None) -> RunLogger:
    """
    Gets or creates a logger for the component.

    Args:
        name: Component name (e.g. 'train_dgp', 'vi_dgp')
        log_dir: Log directory (if None, uses the directory set by set_log_dir)
    """
    directory = log_dir if log_dir is not None else _current_log_dir
    key = f"{directory}_{name}" if directory else name

    if key not in _loggers:
        _loggers[key] = RunLogger(name, directory)
    return _loggers[key]
