"""
Gaussian random fields with the L2-norm exponential covariance

    Cov(x, x') = sigma_k^2 exp(-sqrt((dx1/l1)^2 + (dx2/l2)^2)),

sampled exactly through a dense Cholesky factor over the cell centers.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.utils.errors import DomainError, NumericalError
from src.utils.grid_field import Grid2D, ScalarField

JITTER_GROWTH = 10.0
JITTER_RETRIES = 3


@dataclass(frozen=True)
class GRFSpec:
    mean: float = 0.0
    sigma_k2: float = 0.5
    l1: float = 0.2
    l2: float = 0.2
    jitter: Optional[float] = None

    def __post_init__(self):
        if self.sigma_k2 <= 0:
            raise DomainError(f"[ERROR] sigma_k2 must be > 0, got {self.sigma_k2}")
        if self.l1 <= 0 or self.l2 <= 0:
            raise DomainError(f"[ERROR] Correlation lengths must be > 0, got ({self.l1}, {self.l2})")
        if self.jitter is not None and self.jitter < 0:
            raise DomainError("[ERROR] jitter must be >= 0")

    @property
    def effective_jitter(self) -> float:
        return self.jitter if self.jitter is not None else 1e-10 * self.sigma_k2


def exp_cov(x: Sequence[float], x_prime: Sequence[float], spec: GRFSpec) -> float:
    d1 = (x[0] - x_prime[0]) / spec.l1
    d2 = (x[1] - x_prime[1]) / spec.l2
    return float(spec.sigma_k2 * np.exp(-np.sqrt(d1 * d1 + d2 * d2)))


def covariance_matrix(grid: Grid2D, spec: GRFSpec) -> np.ndarray:
    centers = grid.cell_centers()
    d1 = (centers[:, None, 0] - centers[None, :, 0]) / spec.l1
    d2 = (centers[:, None, 1] - centers[None, :, 1]) / spec.l2
    return spec.sigma_k2 * np.exp(-np.sqrt(d1 ** 2 + d2 ** 2))


def cholesky_factor(grid: Grid2D, spec: GRFSpec) -> np.ndarray:
    """
    Lower Cholesky factor of the covariance plus jitter * I.

    The jitter grows tenfold on failure, up to three retries.
    """
    cov = covariance_matrix(grid, spec)
    jitter = spec.effective_jitter
    for _ in range(JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(grid.size))
        except np.linalg.LinAlgError:
            jitter = max(jitter, 1e-300) * JITTER_GROWTH
    raise NumericalError(
        f"[ERROR] Covariance factorization failed for l1={spec.l1}, l2={spec.l2} after {JITTER_RETRIES} jitter increases"
    )


class GRFSampler:
    """Factorizes once, then draws any number of fields."""

    def __init__(self, grid: Grid2D, spec: GRFSpec):
        self.grid = grid
        self.spec = spec
        self.factor = cholesky_factor(grid, spec)

    def sample(self, rng: np.random.Generator) -> ScalarField:
        xi = rng.standard_normal(self.grid.size)
        return ScalarField(self.grid, self.spec.mean + self.factor @ xi)


def sample_grf(grid: Grid2D, spec: GRFSpec, rng: np.random.Generator) -> ScalarField:
    """k = m + L xi with L the Cholesky factor of the covariance over cell centers."""
    return GRFSampler(grid, spec).sample(rng)
