"""
Synthetic binary channelized log-permeability fields.

Each channel is a band of constant width around a sinusoidal centerline
x2 = y0 + A sin(2 pi x1 / wavelength + phase); cells inside any band take
k_high, all others k_low.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.utils.errors import DomainError
from src.utils.grid_field import Grid2D, ScalarField


@dataclass(frozen=True)
class ChannelSpec:
    n_channels: int = 2
    width_range: Tuple[float, float] = (0.1, 0.2)
    amplitude_range: Tuple[float, float] = (0.05, 0.2)
    wavelength_range: Tuple[float, float] = (0.5, 1.5)
    k_low: float = 0.0
    k_high: float = 4.0

    def __post_init__(self):
        if self.n_channels < 0:
            raise DomainError("[ERROR] n_channels must be >= 0")
        lo, hi = self.width_range
        if not 0.0 < lo <= hi < 1.0:
            raise DomainError(f"[ERROR] Channel width range must lie in (0,1), got {self.width_range}")
        if self.amplitude_range[0] < 0 or self.amplitude_range[0] > self.amplitude_range[1]:
            raise DomainError(f"[ERROR] Invalid amplitude range {self.amplitude_range}")
        if self.wavelength_range[0] <= 0 or self.wavelength_range[0] > self.wavelength_range[1]:
            raise DomainError(f"[ERROR] Invalid wavelength range {self.wavelength_range}")
        if self.k_low >= self.k_high:
            raise DomainError("[ERROR] k_low must be smaller than k_high")


def sample_channel(grid: Grid2D, spec: ChannelSpec, rng: np.random.Generator) -> ScalarField:
    centers = grid.cell_centers()
    x1, x2 = centers[:, 0], centers[:, 1]
    inside = np.zeros(grid.size, dtype=bool)

    for _ in range(spec.n_channels):
        y0 = rng.uniform(0.0, 1.0)
        amplitude = rng.uniform(*spec.amplitude_range)
        wavelength = rng.uniform(*spec.wavelength_range)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        width = rng.uniform(*spec.width_range)
        centerline = y0 + amplitude * np.sin(2.0 * np.pi * x1 / wavelength + phase)
        inside |= np.abs(x2 - centerline) < 0.5 * width

    return ScalarField(grid, np.where(inside, spec.k_high, spec.k_low))
