import pytest

from src.utils.config import (
    DESK_PRESET, FULL_CHANNEL_PRESET, FULL_PRESET, SCHEMA, format_value, load_config, parse_config_text,
    write_config_snapshot,
)
from src.utils.errors import ConfigError


def test_defaults_cover_every_key():
    cfg = load_config()
    assert {key for key, _ in cfg.items()} == set(SCHEMA)
    assert cfg["nx"] == 32
    assert cfg["noise_levels"] == (0.05, 0.07, 0.10)
    assert cfg["record_timing"] is True


def test_presets():
    full = load_config(preset="full")
    assert (full["nx"], full["latent_dim"], full["n_train"]) == (64, 256, 4096)
    assert full["surrogate_sizes"] == (1024, 2048, 4096)
    desk = load_config(preset="desk")
    assert desk["vi_iterations"] == int(DESK_PRESET["vi_iterations"])
    assert set(FULL_PRESET) <= set(SCHEMA)
    with pytest.raises(ConfigError):
        load_config(preset="laptop")


def test_channel_preset():
    cfg = load_config(preset="full-channel")
    assert cfg["prior"] == "channel"
    assert (cfg["nx"], cfg["latent_dim"]) == (64, 512)
    assert (cfg["vi_iterations"], cfg["pcn_iterations"], cfg["pcn_burn_in"]) == (8000, 300_000, 290_000)
    assert cfg["surrogate_schedule"] == "one-cycle"
    assert cfg["surrogate_lr"] == pytest.approx(1e-4)
    assert set(FULL_CHANNEL_PRESET) <= set(SCHEMA)


def test_file_then_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# small run\nnx = 8\nny=8   # inline comment\nlatent_dim=4\nmethod=mcmc-nn\n", encoding="utf-8")
    cfg = load_config(str(path), {"nx": "10", "seed": None}, preset="full")
    assert cfg["nx"] == 10
    assert cfg["ny"] == 8
    assert cfg["latent_dim"] == 4
    assert cfg["method"] == "mcmc-nn"
    assert cfg["seed"] == 1234


def test_rejects_unknown_and_invalid_values(tmp_path):
    with pytest.raises(ConfigError):
        load_config(overrides={"grid": "8"})
    with pytest.raises(ConfigError):
        load_config(overrides={"nx": "eight"})
    with pytest.raises(ConfigError):
        load_config(overrides={"method": "hmc"})
    with pytest.raises(ConfigError):
        load_config(overrides={"record_timing": "maybe"})
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.cfg"))
    with pytest.raises(ConfigError):
        parse_config_text("nx 8\n")


@pytest.mark.parametrize("overrides", [
    {"nx": "2"},
    {"nx": "4", "ny": "4", "latent_dim": "16"},
    {"pcn_beta": "1.5"},
    {"pcn_iterations": "100", "pcn_burn_in": "100"},
    {"length_min": "0.5", "length_max": "0.2"},
    {"k_low": "4", "k_high": "1"},
    {"vi_lr_mu": "0"},
    {"workers": "0"},
])
def test_cross_field_validation(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides)


def test_lists_and_booleans():
    cfg = load_config(overrides={"surrogate_sizes": "8, 16,32", "noise_levels": "0.1", "record_timing": "off"})
    assert cfg["surrogate_sizes"] == (8, 16, 32)
    assert cfg["noise_levels"] == (0.1,)
    assert cfg["record_timing"] is False


def test_replace_and_unknown_lookup():
    cfg = load_config()
    changed = cfg.replace(seed=7)
    assert changed["seed"] == 7
    assert cfg["seed"] == 1234
    with pytest.raises(ConfigError):
        cfg.replace(colour="red")
    with pytest.raises(ConfigError):
        cfg["colour"]


def test_snapshot_round_trips(tmp_path):
    cfg = load_config(overrides={"vi_lr_mu": "0.001", "surrogate_sizes": "4,8"})
    path = write_config_snapshot(str(tmp_path / "snap"), cfg)
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines == sorted(lines)
    assert "surrogate_sizes=4,8" in lines
    reloaded = load_config(path)
    assert reloaded.raw == cfg.raw


def test_format_value():
    assert format_value(True) == "true"
    assert format_value((1, 2)) == "1,2"
    assert format_value(0.1) == "0.1"
    assert format_value("grf") == "grf"
