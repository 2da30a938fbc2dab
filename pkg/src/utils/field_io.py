"""
Text formats for fields, datasets, observations and parameter vectors.

Field file:
    FIELD v1 <ny> <nx>
    <nx values of row j = 0>
    ...
Parameter file:
    PARAMS v1 <n_blocks> <total>
    META <section> <key>=<value>      (zero or more)
    BLOCK <name> <offset> <length> <shape, comma separated>
    VALUES
    <values, 8 per line>
Numbers are written with 17 significant digits, enough to round-trip doubles.
"""

import os
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.utils.errors import FieldParseError
from src.utils.grid_field import FieldDataset, Grid2D, ObservationPlan, ObservationSet, ScalarField

FIELD_MAGIC = "FIELD"
PARAMS_MAGIC = "PARAMS"
FORMAT_VERSION = "v1"
VALUES_PER_LINE = 8


def format_number(value: float) -> str:
    return format(float(value), ".17g")


def _lines_with_offsets(text: str) -> Iterator[Tuple[int, str]]:
    """Yields (byte offset of line start, line without newline)."""
    offset = 0
    for raw in text.splitlines(keepends=True):
        yield offset, raw.rstrip("\r\n")
        offset += len(raw.encode("utf-8"))


def _parse_number(token: str, offset: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FieldParseError("Malformed number", offset=offset, token=token)
    if not np.isfinite(value):
        raise FieldParseError("Non-finite value", offset=offset, token=token)
    return value


def _tokens_with_offsets(line: str, line_offset: int) -> Iterator[Tuple[int, str]]:
    position = 0
    for token in line.split():
        position = line.index(token, position)
        yield line_offset + len(line[:position].encode("utf-8")), token
        position += len(token)


def _check_header(tokens: List[str], magic: str, expected_len: int) -> None:
    if not tokens or tokens[0] != magic:
        raise FieldParseError(f"Missing '{magic}' header", offset=0, token=tokens[0] if tokens else None)
    if len(tokens) < 2 or tokens[1] != FORMAT_VERSION:
        raise FieldParseError(
            f"Unsupported {magic.lower()} format version", offset=0, token=tokens[1] if len(tokens) > 1 else None
        )
    if len(tokens) != expected_len:
        raise FieldParseError(f"Malformed {magic.lower()} header", offset=0)


# ---------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------

def write_field(path: str, field: ScalarField) -> None:
    """Write a field in the FIELD v1 text format. The parent directory must exist."""
    grid = field.grid
    rows = field.as_array()
    lines = [f"{FIELD_MAGIC} {FORMAT_VERSION} {grid.ny} {grid.nx}"]
    for row in rows:
        lines.append(" ".join(format_number(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def parse_field(text: str) -> ScalarField:
    lines = list(_lines_with_offsets(text))
    if not lines:
        raise FieldParseError("Empty field file", offset=0)

    header = lines[0][1].split()
    _check_header(header, FIELD_MAGIC, 4)
    try:
        ny, nx = int(header[2]), int(header[3])
    except ValueError:
        raise FieldParseError("Malformed grid size in header", offset=0)
    if nx < 2 or ny < 2:
        raise FieldParseError("Grid must be at least 2x2", offset=0)

    values: List[float] = []
    last_offset = lines[0][0]
    for line_offset, line in lines[1:]:
        last_offset = line_offset
        for token_offset, token in _tokens_with_offsets(line, line_offset):
            values.append(_parse_number(token, token_offset))

    if len(values) != nx * ny:
        raise FieldParseError(
            f"Length mismatch: header declares {nx * ny} values, found {len(values)}", offset=last_offset
        )
    return ScalarField(Grid2D(nx=nx, ny=ny), np.array(values))


def read_field(path: str) -> ScalarField:
    with open(path, "r", encoding="utf-8") as f:
        return parse_field(f.read())


# ---------------------------------------------------------------------
# key=value metadata
# ---------------------------------------------------------------------

def write_metadata(path: str, metadata: Dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in sorted(metadata):
            f.write(f"{key}={metadata[key]}\n")


def read_metadata(path: str) -> Dict[str, str]:
    metadata = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FieldParseError(f"Malformed metadata line in {path}", token=line)
            metadata[key.strip()] = value.strip()
    return metadata


# ---------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------

def write_dataset(directory: str, dataset: FieldDataset) -> None:
    os.makedirs(directory, exist_ok=True)
    for idx, member in enumerate(dataset.fields):
        write_field(os.path.join(directory, f"field_{idx:06d}.txt"), member)
    metadata = dict(dataset.metadata)
    metadata["count"] = str(len(dataset))
    metadata["nx"] = str(dataset.grid.nx)
    metadata["ny"] = str(dataset.grid.ny)
    write_metadata(os.path.join(directory, "meta.txt"), metadata)


def read_dataset(directory: str, limit: Optional[int] = None) -> FieldDataset:
    metadata = read_metadata(os.path.join(directory, "meta.txt"))
    names = sorted(n for n in os.listdir(directory) if n.startswith("field_") and n.endswith(".txt"))
    if limit is not None:
        names = names[:limit]
    fields = [read_field(os.path.join(directory, name)) for name in names]
    grid = Grid2D(nx=int(metadata["nx"]), ny=int(metadata["ny"]))
    return FieldDataset(grid=grid, fields=fields, metadata=metadata)


# ---------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------

def write_observations(directory: str, plan: ObservationPlan, obs: ObservationSet, extra: Optional[Dict[str, str]] = None) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "observations.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("x1,x2,clean,noisy,sigma\n")
        for (x1, x2), c, n, s in zip(plan.locations, obs.clean, obs.noisy, obs.sigma):
            f.write(",".join(format_number(v) for v in (x1, x2, c, n, s)) + "\n")
    metadata = {"noise_level": format_number(obs.noise_level), "n_obs": str(len(obs))}
    if extra:
        metadata.update(extra)
    write_metadata(os.path.join(directory, "obs_meta.txt"), metadata)


def read_observations(directory: str) -> Tuple[ObservationPlan, ObservationSet]:
    metadata = read_metadata(os.path.join(directory, "obs_meta.txt"))
    locations, clean, noisy, sigma = [], [], [], []
    with open(os.path.join(directory, "observations.csv"), "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "x1,x2,clean,noisy,sigma":
            raise FieldParseError("Unexpected observations header", offset=0, token=header)
        for line in f:
            if not line.strip():
                continue
            x1, x2, c, n, s = (float(t) for t in line.strip().split(","))
            locations.append((x1, x2))
            clean.append(c)
            noisy.append(n)
            sigma.append(s)
    plan = ObservationPlan(tuple(locations))
    obs = ObservationSet(
        clean=np.array(clean), noisy=np.array(noisy), sigma=np.array(sigma),
        noise_level=float(metadata["noise_level"]),
    )
    return plan, obs


# ---------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------

ParamBlockRecord = Tuple[str, int, int, Tuple[int, ...]]


def write_param_file(
    path: str,
    blocks: List[ParamBlockRecord],
    values: np.ndarray,
    meta: Optional[Dict[str, Dict[str, str]]] = None,
) -> None:
    values = np.asarray(values, dtype=np.float64).ravel()
    lines = [f"{PARAMS_MAGIC} {FORMAT_VERSION} {len(blocks)} {values.size}"]
    for section, entries in (meta or {}).items():
        for key in sorted(entries):
            lines.append(f"META {section} {key}={entries[key]}")
    for name, offset, length, shape in blocks:
        lines.append(f"BLOCK {name} {offset} {length} {','.join(str(d) for d in shape)}")
    lines.append("VALUES")
    for start in range(0, values.size, VALUES_PER_LINE):
        lines.append(" ".join(format_number(v) for v in values[start:start + VALUES_PER_LINE]))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_param_file(path: str) -> Tuple[List[ParamBlockRecord], np.ndarray, Dict[str, Dict[str, str]]]:
    with open(path, "r", encoding="utf-8") as f:
        lines = list(_lines_with_offsets(f.read()))
    if not lines:
        raise FieldParseError("Empty parameter file", offset=0)

    header = lines[0][1].split()
    _check_header(header, PARAMS_MAGIC, 4)
    n_blocks, total = int(header[2]), int(header[3])

    blocks: List[ParamBlockRecord] = []
    meta: Dict[str, Dict[str, str]] = {}
    values: List[float] = []
    in_values = False
    for line_offset, line in lines[1:]:
        if in_values:
            for token_offset, token in _tokens_with_offsets(line, line_offset):
                values.append(_parse_number(token, token_offset))
            continue
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "VALUES":
            in_values = True
        elif tokens[0] == "META" and len(tokens) == 3:
            key, _, value = tokens[2].partition("=")
            meta.setdefault(tokens[1], {})[key] = value
        elif tokens[0] == "BLOCK" and len(tokens) == 5:
            shape = tuple(int(d) for d in tokens[4].split(",") if d)
            blocks.append((tokens[1], int(tokens[2]), int(tokens[3]), shape))
        else:
            raise FieldParseError("Unexpected line in parameter file", offset=line_offset, token=tokens[0])

    if len(blocks) != n_blocks:
        raise FieldParseError(f"Header declares {n_blocks} blocks, found {len(blocks)}", offset=0)
    if len(values) != total:
        raise FieldParseError(f"Header declares {total} values, found {len(values)}", offset=0)
    return blocks, np.array(values), meta
