import pytest

from src.utils.evaluation_counter import clear_run_context
from src.utils.logger import set_log_dir


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path):
    """Every test logs into its own temporary directory."""
    set_log_dir(str(tmp_path / "logs"))
    yield
    clear_run_context()
    set_log_dir(None)
