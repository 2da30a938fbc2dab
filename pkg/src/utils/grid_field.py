"""
Uniform-grid geometry, field containers and the observation operator.

Layout convention used everywhere: values are stored row-major with x1
fastest, i.e. cell (i, j) lives at index j * nx + i, and a (ny, nx) array
view has x2 along axis 0 and x1 along axis 1.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.utils.errors import DomainError

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid over the unit square."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise DomainError(f"[ERROR] Grid must be at least 2x2, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def cell_centers(self) -> np.ndarray:
        """Returns an (nx*ny, 2) array of cell centers in storage order."""
        x1 = (np.arange(self.nx) + 0.5) * self.hx
        x2 = (np.arange(self.ny) + 0.5) * self.hy
        xx, yy = np.meshgrid(x1, x2)
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.grid.size:
            raise DomainError(
                f"[ERROR] Field has {values.size} values, grid {self.grid.nx}x{self.grid.ny} needs {self.grid.size}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("[ERROR] Field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_array(self) -> np.ndarray:
        """(ny, nx) view, row j holds cells (i = 0..nx-1, j)."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def scale(self, factor: float) -> "ScalarField":
        return ScalarField(self.grid, factor * self.values)


@dataclass(frozen=True)
class ObservationPlan:
    locations: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        locations = tuple((float(x1), float(x2)) for x1, x2 in self.locations)
        for x1, x2 in locations:
            if not (0.0 < x1 < 1.0 and 0.0 < x2 < 1.0):
                raise DomainError(f"[ERROR] Observation location ({x1}, {x2}) is outside (0,1)^2")
        if len(set(locations)) != len(locations):
            raise DomainError("[ERROR] Observation locations must be distinct")
        object.__setattr__(self, "locations", locations)

    def __len__(self) -> int:
        return len(self.locations)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    clean: np.ndarray
    noisy: np.ndarray
    sigma: np.ndarray
    noise_level: float

    def __post_init__(self):
        clean = np.asarray(self.clean, dtype=np.float64)
        noisy = np.asarray(self.noisy, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if not (clean.shape == noisy.shape == sigma.shape) or clean.ndim != 1:
            raise DomainError("[ERROR] clean, noisy and sigma must be vectors of the same length")
        if np.any(sigma <= 0):
            raise DomainError("[ERROR] Observation sigma must be strictly positive")
        for arr in (clean, noisy, sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "clean", clean)
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "sigma", sigma)

    def __len__(self) -> int:
        return self.noisy.size


@dataclass(frozen=True, eq=False)
class FieldDataset:
    grid: Grid2D
    fields: List[ScalarField]
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for idx, member in enumerate(self.fields):
            if member.grid != self.grid:
                raise DomainError(f"[ERROR] Dataset member {idx} does not match the shared grid")

    def __len__(self) -> int:
        return len(self.fields)

    def as_matrix(self) -> np.ndarray:
        """(N, nx*ny) matrix with one field per row."""
        return np.stack([f.values for f in self.fields]) if self.fields else np.zeros((0, self.grid.size))


def _check_same_grid(a: Grid2D, b: Grid2D) -> None:
    if a != b:
        raise DomainError(f"[ERROR] Grid mismatch: {a.nx}x{a.ny} vs {b.nx}x{b.ny}")


def uniform_observation_plan(n_per_axis: int = 8) -> ObservationPlan:
    """Uniform plan x = 0.0625 + 0.125 i (for 8 per axis), x1 fastest."""
    step = 1.0 / n_per_axis
    coords = [0.5 * step + step * i for i in range(n_per_axis)]
    return ObservationPlan(tuple((x1, x2) for x2 in coords for x1 in coords))


def _axis_weights(coord: float, h: float, n: int) -> Tuple[int, float]:
    """Lower cell index and fractional offset for linear interpolation between cell centers.

    Points between the outermost center and the wall are linearly extrapolated
    from the two outermost cells, which keeps the operator exact for affine fields.
    """
    s = coord / h - 0.5
    i0 = int(np.floor(s))
    i0 = min(max(i0, 0), n - 2)
    return i0, s - i0


def observation_matrix(grid: Grid2D, plan: ObservationPlan) -> sp.csr_matrix:
    """Sparse (len(plan), nx*ny) bilinear interpolation operator."""
    rows, cols, vals = [], [], []
    for r, (x1, x2) in enumerate(plan.locations):
        i0, tx = _axis_weights(x1, grid.hx, grid.nx)
        j0, ty = _axis_weights(x2, grid.hy, grid.ny)
        for di, wx in ((0, 1.0 - tx), (1, tx)):
            for dj, wy in ((0, 1.0 - ty), (1, ty)):
                rows.append(r)
                cols.append((j0 + dj) * grid.nx + (i0 + di))
                vals.append(wx * wy)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(plan), grid.size))


def observe(field: ScalarField, plan: ObservationPlan) -> np.ndarray:
    """
    Bilinear interpolation of a cell-centered field at each plan location.

    Args:
        field: Field to sample
        plan: Observation locations, strictly inside (0,1)^2

    Returns:
        Vector of interpolated values in plan order
    """
    return observation_matrix(field.grid, plan) @ field.values


def add_noise(
    clean: Sequence[float],
    noise_level: float,
    rng: np.random.Generator,
    sigma_floor: float = SIGMA_FLOOR,
) -> ObservationSet:
    """
    Corrupt clean observations with independent relative Gaussian noise.

    sigma_j = max(noise_level * |clean_j|, sigma_floor),
    noisy_j = clean_j + sigma_j * xi_j with xi_j standard normal.
    """
    if noise_level < 0:
        raise DomainError(f"[ERROR] noise_level must be >= 0, got {noise_level}")
    clean = np.asarray(clean, dtype=np.float64)
    if not np.all(np.isfinite(clean)):
        raise DomainError("[ERROR] Clean observations contain non-finite values")

    sigma = np.maximum(noise_level * np.abs(clean), sigma_floor)
    if noise_level == 0:
        noisy = clean.copy()
    else:
        noisy = clean + sigma * rng.standard_normal(clean.size)
    return ObservationSet(clean=clean, noisy=noisy, sigma=sigma, noise_level=float(noise_level))
