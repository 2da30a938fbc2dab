"""
Run configuration: UTF-8 `key=value` files with `#` comments.

Every key is validated against SCHEMA; unknown keys are errors. Command
line overrides are applied after the file (flags win), and every command
writes the resolved configuration next to its outputs.
"""

import os
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Tuple

from src.utils.errors import ConfigError


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _parse_float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.replace(" ", "").split(",") if t)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value
    return parse


# key -> (parser, default)
SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    # run
    "seed": (int, 1234),
    "out": (str, "runs/desk"),
    "workers": (int, 1),
    "record_timing": (_parse_bool, True),
    # grid and forward model
    "nx": (int, 32),
    "ny": (int, 32),
    "f_const": (float, 3.0),
    "obs_per_axis": (int, 8),
    "noise_level": (float, 0.05),
    # prior data
    "prior": (_choice("grf", "channel"), "grf"),
    "grf_mean": (float, 0.0),
    "sigma_k2": (float, 0.5),
    "length_min": (float, 0.1),
    "length_max": (float, 0.4),
    "n_lengths": (int, 10),
    "n_per_length": (int, 100),
    "n_channel_fields": (int, 1000),
    "n_channels": (int, 2),
    "channel_width_min": (float, 0.1),
    "channel_width_max": (float, 0.2),
    "channel_amp_min": (float, 0.05),
    "channel_amp_max": (float, 0.2),
    "channel_wavelength_min": (float, 0.5),
    "channel_wavelength_max": (float, 1.5),
    "k_low": (float, 0.0),
    "k_high": (float, 4.0),
    # deep generative prior
    "latent_dim": (int, 64),
    "vae_hidden": (int, 0),
    "vae_epochs": (int, 300),
    "vae_batch": (int, 64),
    "vae_lr": (float, 1e-4),
    "vae_mc_samples": (int, 1),
    # physics-constrained surrogate
    "surrogate_backend": (_choice("mlp", "conv"), "mlp"),
    "surrogate_hidden": (int, 512),
    "surrogate_channels": (int, 16),
    "surrogate_gamma": (float, 10.0),
    "surrogate_epochs": (int, 300),
    "surrogate_batch": (int, 32),
    "surrogate_lr": (float, 1e-3),
    "surrogate_schedule": (_choice("constant", "one-cycle"), "constant"),
    "n_train": (int, 1024),
    "surrogate_sizes": (_parse_int_list, (256, 512, 1024)),
    # inference
    "method": (_choice("vi-nn", "vi-adjoint", "mcmc-nn", "mcmc-fem-analog"), "vi-nn"),
    "vi_iterations": (int, 5000),
    "vi_samples": (int, 1),
    "vi_lr_mu": (float, 8e-4),
    "vi_lr_logvar": (float, 8e-4),
    "vi_entropy": (_choice("closed-form", "mc-stl", "mc-full"), "closed-form"),
    "vi_optimizer": (_choice("sgd", "adam"), "sgd"),
    "vi_clip": (float, 0.0),
    "n_posterior": (int, 10000),
    "pcn_beta": (float, 0.15),
    "pcn_iterations": (int, 50000),
    "pcn_burn_in": (int, 40000),
    "pcn_thin": (int, 1),
    # diagnostics
    "n_gradient_pairs": (int, 1000),
    "cos_threshold": (float, 0.7),
    "noise_levels": (_parse_float_list, (0.05, 0.07, 0.10)),
}

# Values from the experiments at full scale (64x64 grid).
FULL_PRESET: Dict[str, str] = {
    "nx": "64", "ny": "64",
    "n_lengths": "10", "n_per_length": "1000",
    "n_channel_fields": "40000",
    "latent_dim": "256",
    "vae_epochs": "300", "vae_batch": "64", "vae_lr": "1e-4",
    "surrogate_epochs": "300", "surrogate_batch": "32", "surrogate_lr": "1e-3",
    "surrogate_schedule": "one-cycle", "n_train": "4096",
    "surrogate_sizes": "1024,2048,4096",
    "vi_iterations": "5000", "vi_samples": "1", "n_posterior": "10000",
    "pcn_iterations": "50000", "pcn_burn_in": "40000",
    "n_gradient_pairs": "1000",
}

# Channelized-prior experiment at full scale; chain keeps its last 10000 states.
FULL_CHANNEL_PRESET: Dict[str, str] = {
    **FULL_PRESET,
    "prior": "channel",
    "latent_dim": "512",
    "surrogate_lr": "1e-4",
    "vi_iterations": "8000",
    "pcn_iterations": "300000", "pcn_burn_in": "290000",
}

DESK_PRESET: Dict[str, str] = {
    "nx": "32", "ny": "32",
    "n_lengths": "10", "n_per_length": "100",
    "latent_dim": "64",
    "vae_epochs": "50",
    "surrogate_epochs": "50",
    "n_train": "1024",
    "vi_iterations": "2000", "n_posterior": "1000",
    "pcn_iterations": "20000", "pcn_burn_in": "10000",
    "n_gradient_pairs": "100",
}

PRESETS = {"full": FULL_PRESET, "full-channel": FULL_CHANNEL_PRESET, "desk": DESK_PRESET}


class RunConfig:
    """Validated, immutable run configuration."""

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(values)

    def __getitem__(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigError(f"[ERROR] Unknown config key '{key}'")
        return self._values[key]

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def get(self, key: str, default: Any = None) -> Any:
        return self._values.get(key, default)

    def items(self) -> Iterable[Tuple[str, Any]]:
        return self._values.items()

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with already-typed overrides (unknown keys rejected)."""
        for key in overrides:
            if key not in SCHEMA:
                raise ConfigError(f"[ERROR] Unknown config key '{key}'")
        values = dict(self._values)
        values.update(overrides)
        return RunConfig(values)

    @property
    def raw(self) -> Dict[str, str]:
        return {key: format_value(value) for key, value in self._values.items()}


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    entries: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"[ERROR] {source}:{lineno}: expected key=value, got '{line}'")
        entries[key.strip()] = value.strip()
    return entries


def _coerce(key: str, text: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"[ERROR] Unknown config key '{key}'")
    parser, _ = SCHEMA[key]
    try:
        return parser(text)
    except ValueError as e:
        raise ConfigError(f"[ERROR] Invalid value for '{key}': {text!r} ({e})")


def _validate(values: Dict[str, Any]) -> None:
    positive_ints = ["nx", "ny", "obs_per_axis", "latent_dim", "vae_epochs", "vae_batch", "vae_mc_samples",
                     "surrogate_epochs", "surrogate_batch", "vi_iterations", "vi_samples", "n_posterior",
                     "pcn_iterations", "pcn_thin", "n_gradient_pairs", "workers"]
    for key in positive_ints:
        if values[key] < 1:
            raise ConfigError(f"[ERROR] '{key}' must be >= 1, got {values[key]}")
    if values["nx"] < 3 or values["ny"] < 3:
        raise ConfigError("[ERROR] Grid must be at least 3x3 for the surrogate stencils")
    if values["latent_dim"] >= values["nx"] * values["ny"]:
        raise ConfigError("[ERROR] latent_dim must be smaller than nx*ny")
    if not 0.0 <= values["pcn_beta"] <= 1.0:
        raise ConfigError(f"[ERROR] pcn_beta must lie in [0,1], got {values['pcn_beta']}")
    if values["pcn_burn_in"] >= values["pcn_iterations"]:
        raise ConfigError("[ERROR] pcn_burn_in must be smaller than pcn_iterations")
    if values["noise_level"] < 0:
        raise ConfigError("[ERROR] noise_level must be >= 0")
    if not 0.0 < values["length_min"] <= values["length_max"] < 1.0:
        raise ConfigError("[ERROR] Correlation length range must lie within (0,1)")
    if values["k_low"] >= values["k_high"]:
        raise ConfigError("[ERROR] k_low must be smaller than k_high")
    for key in ("vae_lr", "surrogate_lr", "vi_lr_mu", "vi_lr_logvar", "surrogate_gamma", "sigma_k2"):
        if values[key] <= 0:
            raise ConfigError(f"[ERROR] '{key}' must be > 0")


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, str]] = None,
    preset: Optional[str] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional preset, a config file and overrides.

    Args:
        path: Optional key=value config file
        overrides: Flag overrides as strings (applied last)
        preset: 'full', 'full-channel' or 'desk'
    """
    raw: Dict[str, str] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"[ERROR] Unknown preset '{preset}'")
        raw.update(PRESETS[preset])
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"[ERROR] Config file {path} not found")
        with open(path, "r", encoding="utf-8") as f:
            raw.update(parse_config_text(f.read(), source=path))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, text in raw.items():
        values[key] = _coerce(key, text)
    _validate(values)
    return RunConfig(values)


def write_config_snapshot(directory: str, config: RunConfig) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "config.resolved.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in sorted(config.raw):
            f.write(f"{key}={config.raw[key]}\n")
    return path
