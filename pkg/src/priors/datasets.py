"""
Training corpora for the generative prior and the surrogate.

Samples are generated with one RNG stream per sample index derived from a
master seed, so the corpus is identical for any number of workers.
"""

from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.priors.channel import ChannelSpec, sample_channel
from src.priors.grf import GRFSampler, GRFSpec
from src.utils.errors import DomainError
from src.utils.field_io import format_number
from src.utils.grid_field import FieldDataset, Grid2D, ScalarField


@dataclass(frozen=True)
class Normalization:
    """Affine map used to present fields to the generative prior: k_n = (k - offset) / scale."""

    offset: float = 0.0
    scale: float = 1.0

    def forward(self, values: np.ndarray) -> np.ndarray:
        return (values - self.offset) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.offset

    def to_metadata(self) -> str:
        if self.offset == 0.0 and self.scale == 1.0:
            return "none"
        return f"affine:{format_number(self.offset)},{format_number(self.scale)}"

    @classmethod
    def from_metadata(cls, text: str) -> "Normalization":
        if not text or text == "none":
            return cls()
        kind, _, params = text.partition(":")
        if kind != "affine":
            raise DomainError(f"[ERROR] Unknown normalization '{text}'")
        offset, scale = (float(t) for t in params.split(","))
        return cls(offset=offset, scale=scale)


def sample_stream(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, index])


def _generate(n: int, master_seed: int, make: Callable[[int, np.random.Generator], ScalarField], workers: int) -> List[ScalarField]:
    def job(index: int) -> ScalarField:
        return make(index, sample_stream(master_seed, index))

    if workers <= 1:
        return [job(i) for i in range(n)]
    with ThreadPool(workers) as pool:
        # map keeps index order
        return pool.map(job, range(n))


def sample_grf_dataset(
    grid: Grid2D,
    n_lengths: int,
    n_per_length: int,
    length_range: Tuple[float, float],
    rng: np.random.Generator,
    mean: float = 0.0,
    sigma_k2: float = 0.5,
    workers: int = 1,
) -> FieldDataset:
    """
    GRF corpus with uncertain correlation lengths.

    Draws n_lengths pairs (l1, l2) ~ U[length_range]^2 and n_per_length fields per pair.
    """
    lo, hi = length_range
    if not 0.0 < lo <= hi < 1.0:
        raise DomainError(f"[ERROR] Correlation length range must lie within (0,1), got {length_range}")

    pairs = [(float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))) for _ in range(n_lengths)]
    master_seed = int(rng.integers(0, 2 ** 63 - 1))
    samplers = [GRFSampler(grid, GRFSpec(mean=mean, sigma_k2=sigma_k2, l1=l1, l2=l2)) for l1, l2 in pairs]

    def make(index: int, stream: np.random.Generator) -> ScalarField:
        return samplers[index // n_per_length].sample(stream)

    fields = _generate(n_lengths * n_per_length, master_seed, make, workers)
    metadata: Dict[str, str] = {
        "generator": "grf",
        "sigma_k2": format_number(sigma_k2),
        "mean": format_number(mean),
        "length_pairs": ";".join(f"{format_number(l1)},{format_number(l2)}" for l1, l2 in pairs),
        "normalization": Normalization().to_metadata(),
    }
    return FieldDataset(grid=grid, fields=fields, metadata=metadata)


def parse_length_pairs(text: str) -> List[Tuple[float, float]]:
    pairs = []
    for item in text.split(";"):
        if item:
            l1, l2 = item.split(",")
            pairs.append((float(l1), float(l2)))
    return pairs


def sample_channel_dataset(
    grid: Grid2D,
    n_fields: int,
    spec: ChannelSpec,
    rng: np.random.Generator,
    workers: int = 1,
) -> FieldDataset:
    """Channel corpus; the normalization maps {k_low, k_high} onto {0, 1}."""
    master_seed = int(rng.integers(0, 2 ** 63 - 1))

    def make(index: int, stream: np.random.Generator) -> ScalarField:
        return sample_channel(grid, spec, stream)

    fields = _generate(n_fields, master_seed, make, workers)
    normalization = Normalization(offset=spec.k_low, scale=spec.k_high - spec.k_low)
    metadata = {
        "generator": "channel",
        "k_low": format_number(spec.k_low),
        "k_high": format_number(spec.k_high),
        "n_channels": str(spec.n_channels),
        "width_range": ",".join(format_number(v) for v in spec.width_range),
        "normalization": normalization.to_metadata(),
    }
    return FieldDataset(grid=grid, fields=fields, metadata=metadata)


def dataset_normalization(dataset: FieldDataset) -> Normalization:
    return Normalization.from_metadata(dataset.metadata.get("normalization", "none"))
