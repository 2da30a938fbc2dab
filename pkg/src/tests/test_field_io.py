import os

import numpy as np
import pytest

from src.utils.errors import FieldParseError
from src.utils.field_io import (
    format_number, parse_field, read_dataset, read_field, read_metadata, read_observations,
    read_param_file, write_dataset, write_field, write_metadata, write_observations, write_param_file,
)
from src.utils.grid_field import FieldDataset, Grid2D, ScalarField, add_noise, uniform_observation_plan


def test_field_file_layout(tmp_path):
    grid = Grid2D(3, 2)
    field = ScalarField(grid, [0.1, 0.2, 0.3, 1.0, 2.0, 3.0])
    path = tmp_path / "k.txt"
    write_field(str(path), field)
    lines = path.read_text().splitlines()
    assert lines[0] == "FIELD v1 2 3"
    assert lines[2].split() == ["1", "2", "3"]
    loaded = read_field(str(path))
    np.testing.assert_array_equal(loaded.values, field.values)
    assert loaded.grid == grid


def test_number_format_round_trips_doubles():
    value = 0.1 + 0.2
    assert float(format_number(value)) == value


def test_parse_errors_report_offsets():
    with pytest.raises(FieldParseError) as excinfo:
        parse_field("FIELD v2 2 2\n1 2\n3 4\n")
    assert "version" in str(excinfo.value)
    assert excinfo.value.token == "v2"

    text = "FIELD v1 2 2\n1 2\n3 x4\n"
    with pytest.raises(FieldParseError) as excinfo:
        parse_field(text)
    assert excinfo.value.offset == text.index("x4")
    assert excinfo.value.token == "x4"


def test_parse_length_mismatch():
    with pytest.raises(FieldParseError) as excinfo:
        parse_field("FIELD v1 2 2\n1 2\n3\n")
    assert "Length mismatch" in str(excinfo.value)


def test_parse_rejects_missing_magic_and_empty():
    with pytest.raises(FieldParseError):
        parse_field("GRID v1 2 2\n1 2 3 4\n")
    with pytest.raises(FieldParseError):
        parse_field("")


def test_metadata_round_trip(tmp_path):
    path = str(tmp_path / "meta.txt")
    write_metadata(path, {"b": "2", "a": "x=y"})
    assert read_metadata(path) == {"a": "x=y", "b": "2"}


def test_dataset_directory(tmp_path):
    grid = Grid2D(2, 2)
    fields = [ScalarField(grid, np.full(4, float(i))) for i in range(3)]
    write_dataset(str(tmp_path / "data"), FieldDataset(grid, fields, {"generator": "grf"}))
    assert sorted(os.listdir(tmp_path / "data"))[:2] == ["field_000000.txt", "field_000001.txt"]

    loaded = read_dataset(str(tmp_path / "data"), limit=2)
    assert len(loaded) == 2
    assert loaded.metadata["count"] == "3"
    assert loaded.metadata["generator"] == "grf"
    np.testing.assert_array_equal(loaded.fields[1].values, np.ones(4))


def test_observations_directory(tmp_path):
    plan = uniform_observation_plan(2)
    obs = add_noise(np.array([0.9, 0.5, 0.3, 0.1]), 0.05, np.random.default_rng(3))
    write_observations(str(tmp_path), plan, obs, extra={"seed": "7"})
    loaded_plan, loaded = read_observations(str(tmp_path))
    assert loaded_plan == plan
    np.testing.assert_array_equal(loaded.noisy, obs.noisy)
    np.testing.assert_array_equal(loaded.sigma, obs.sigma)
    assert loaded.noise_level == 0.05
    assert read_metadata(str(tmp_path / "obs_meta.txt"))["seed"] == "7"


def test_param_file(tmp_path):
    path = str(tmp_path / "p.params")
    values = np.arange(10.0) / 3.0
    blocks = [("w", 0, 6, (2, 3)), ("b", 6, 4, (4,))]
    write_param_file(path, blocks, values, {"cfg": {"lr": "0.001"}})
    with open(path) as f:
        assert f.readline().strip() == "PARAMS v1 2 10"
    read_blocks, read_values, meta = read_param_file(path)
    assert read_blocks == blocks
    np.testing.assert_array_equal(read_values, values)
    assert meta == {"cfg": {"lr": "0.001"}}


def test_param_file_value_count_checked(tmp_path):
    path = tmp_path / "bad.params"
    path.write_text("PARAMS v1 1 3\nBLOCK w 0 3 3\nVALUES\n1 2\n")
    with pytest.raises(FieldParseError):
        read_param_file(str(path))
