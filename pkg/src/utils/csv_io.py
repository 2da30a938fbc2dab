import csv
from pathlib import Path
from typing import Any, Dict, List, Sequence

from src.utils.field_io import format_number


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return format_number(value)
    return str(value)


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Write a CSV with a one-line header; floats use the round-trip number format."""
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def append_csv_row(path: str, columns: Sequence[str], row: Dict[str, Any]) -> None:
    """Append one row, writing the header first when the file does not exist yet."""
    exists = Path(path).exists()
    with open(path, "a", newline="", encoding="utf-8") as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=list(columns), lineterminator="\n")
        if not exists:
            writer.writeheader()
        writer.writerow({k: _cell(row.get(k, "N/A")) for k in columns})


def read_csv(path: str) -> List[Dict[str, str]]:
    if not Path(path).exists():
        return []
    with open(path, "r", newline="", encoding="utf-8") as csvfile:
        return list(csv.DictReader(csvfile))
