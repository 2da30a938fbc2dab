"""
Evaluation metrics: gradient agreement between backends, posterior field
statistics and estimator-variance studies.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.actions.vi.vi_dgp import VariationalParams, grad_elbo_vi
from src.shared.backends import Decoder, GradientBackend
from src.utils.errors import DomainError, MetricError
from src.utils.grid_field import ScalarField
from src.utils.logger import get_logger

AGREEMENT_COLUMNS = ["block", "dataset_size", "cos_alpha", "n_pairs"]


@dataclass(frozen=True, eq=False)
class GradientPair:
    g_nn: np.ndarray
    g_a: np.ndarray

    def __post_init__(self):
        g_nn = np.asarray(self.g_nn, dtype=np.float64).ravel()
        g_a = np.asarray(self.g_a, dtype=np.float64).ravel()
        if g_nn.shape != g_a.shape:
            raise DomainError(f"[ERROR] Gradient pair lengths differ: {g_nn.size} vs {g_a.size}")
        object.__setattr__(self, "g_nn", g_nn)
        object.__setattr__(self, "g_a", g_a)


def cos_alpha(pairs: Sequence[GradientPair]) -> float:
    """Mean cosine similarity (1/N) sum g_nn . g_a / (|g_nn| |g_a|)."""
    if not pairs:
        raise DomainError("[ERROR] cos_alpha needs at least one gradient pair")
    total = 0.0
    for index, pair in enumerate(pairs):
        norm_nn = np.linalg.norm(pair.g_nn)
        norm_a = np.linalg.norm(pair.g_a)
        if norm_nn == 0.0 or norm_a == 0.0:
            raise MetricError("Zero-norm gradient in cosine metric", index)
        total += float(pair.g_nn @ pair.g_a) / (norm_nn * norm_a)
    return float(np.clip(total / len(pairs), -1.0, 1.0))


@dataclass(frozen=True)
class AgreementReport:
    cos_mu: float
    cos_logvar: float
    n_pairs: int

    def rows(self, dataset_size: str) -> List[Tuple[str, str, float, int]]:
        return [("mu", dataset_size, self.cos_mu, self.n_pairs), ("logvar", dataset_size, self.cos_logvar, self.n_pairs)]


def gradient_agreement_study(
    candidate: GradientBackend,
    reference: GradientBackend,
    decoder: Decoder,
    n_pairs: int,
    rng: np.random.Generator,
    samples: int = 1,
) -> AgreementReport:
    """
    Sample lambda with mu, logvar ~ N(0, I), compute the lower-bound gradient
    under both backends with shared eps draws, and report cos alpha per block.
    """
    logger = get_logger("diagnostics")
    h = decoder.latent_dim
    mu_pairs, logvar_pairs = [], []
    for _ in range(n_pairs):
        params = VariationalParams(rng.standard_normal(h), rng.standard_normal(h))
        eps = rng.standard_normal((samples, h))
        g_nn = grad_elbo_vi(params, candidate, decoder, eps)
        g_a = grad_elbo_vi(params, reference, decoder, eps)
        mu_pairs.append(GradientPair(g_nn.mu, g_a.mu))
        logvar_pairs.append(GradientPair(g_nn.logvar, g_a.logvar))
    report = AgreementReport(cos_alpha(mu_pairs), cos_alpha(logvar_pairs), n_pairs)
    logger.log_state(candidate=candidate.name, cos_mu=report.cos_mu, cos_logvar=report.cos_logvar, n_pairs=n_pairs)
    return report


def misfit_gradient_agreement(
    candidate: GradientBackend, reference: GradientBackend, fields: Sequence[np.ndarray]
) -> float:
    """cos alpha between dPhi/dk of two backends over a set of k fields."""
    pairs = [GradientPair(candidate.misfit_and_grad(k)[1], reference.misfit_and_grad(k)[1]) for k in fields]
    return cos_alpha(pairs)


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Cellwise mean and population std of posterior samples."""

    mean: ScalarField
    std: ScalarField
    rel_error: Optional[float] = None


def relative_l2_error(estimate: ScalarField, truth: ScalarField) -> float:
    if estimate.grid != truth.grid:
        raise DomainError("[ERROR] Estimate and truth are on different grids")
    norm = np.linalg.norm(truth.values)
    if norm == 0.0:
        raise DomainError("[ERROR] Relative error is undefined for a zero truth field")
    return float(np.linalg.norm(estimate.values - truth.values) / norm)


def posterior_stats(samples: Sequence[ScalarField], truth: Optional[ScalarField] = None) -> PosteriorSummary:
    if not samples:
        raise DomainError("[ERROR] posterior_stats needs at least one sample")
    grid = samples[0].grid
    for idx, sample in enumerate(samples):
        if sample.grid != grid:
            raise DomainError(f"[ERROR] Posterior sample {idx} is on a different grid")
    stacked = np.stack([s.values for s in samples])
    mean = ScalarField(grid, stacked.mean(axis=0))
    std = ScalarField(grid, stacked.std(axis=0))
    rel_error = relative_l2_error(mean, truth) if truth is not None else None
    return PosteriorSummary(mean=mean, std=std, rel_error=rel_error)


def estimator_variance(
    params: VariationalParams,
    backend: GradientBackend,
    decoder: Decoder,
    n_draws: int,
    rng: np.random.Generator,
    samples: int = 1,
    entropy: str = "closed-form",
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-coordinate variance of the lower-bound gradient estimator at a frozen lambda."""
    mu_grads, logvar_grads = [], []
    for _ in range(n_draws):
        grad = grad_elbo_vi(params, backend, decoder, rng.standard_normal((samples, params.dim)), entropy)
        mu_grads.append(grad.mu)
        logvar_grads.append(grad.logvar)
    return np.var(mu_grads, axis=0, ddof=1), np.var(logvar_grads, axis=0, ddof=1)


def ms_variance_study(
    params: VariationalParams,
    backend: GradientBackend,
    decoder: Decoder,
    sample_counts: Sequence[int],
    n_draws: int,
    rng: np.random.Generator,
) -> Dict[int, float]:
    """Total gradient-estimator variance (both blocks summed) for each draws-per-step count."""
    study = {}
    for m in sample_counts:
        var_mu, var_logvar = estimator_variance(params, backend, decoder, n_draws, rng, samples=m)
        study[int(m)] = float(np.sum(var_mu) + np.sum(var_logvar))
    return study


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if window < 1 or window > values.size:
        raise DomainError(f"[ERROR] Window {window} does not fit a series of length {values.size}")
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
