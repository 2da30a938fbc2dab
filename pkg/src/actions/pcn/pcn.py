"""
Preconditioned Crank-Nicolson sampler over the latent variable.

    z' = sqrt(1 - beta^2) z + beta xi,   xi ~ N(0, I)
    accept with probability exp(min(0, l(z') - l(z)))

where l(z) = -Phi(G(z)). The proposal preserves the N(0, I) prior, so only
the likelihood enters the acceptance test.
"""

from dataclasses import dataclass, replace
from multiprocessing.pool import ThreadPool
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.priors.datasets import sample_stream
from src.shared.backends import Decoder, GradientBackend, latent_misfit
from src.utils.csv_io import write_csv
from src.utils.errors import DomainError
from src.utils.evaluation_counter import clear_run_context, get_run_context, set_run_context
from src.utils.logger import get_logger

LogLikelihood = Callable[[np.ndarray], float]
CHAIN_COLUMNS = ["iter", "accepted", "loglik"]


@dataclass(frozen=True)
class PCNConfig:
    beta: float = 0.15
    iterations: int = 50000
    burn_in: int = 40000
    thin: int = 1
    log_every: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"[ERROR] beta must lie in [0, 1], got {self.beta}")
        if not 0 <= self.burn_in < self.iterations:
            raise DomainError(f"[ERROR] burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in}")
        if self.thin < 1:
            raise DomainError(f"[ERROR] thin must be >= 1, got {self.thin}")


@dataclass(frozen=True, eq=False)
class ChainState:
    """Current point with its cached log-likelihood."""

    z: np.ndarray
    loglik: float
    accepted: int = 0
    steps: int = 0
    last_accepted: bool = False


@dataclass(frozen=True, eq=False)
class ChainResult:
    samples: np.ndarray
    acceptance_rate: float
    ess: np.ndarray
    loglik: np.ndarray
    accepted: np.ndarray
    final_state: ChainState


def initial_state(z: np.ndarray, loglik_fn: LogLikelihood) -> ChainState:
    z = np.asarray(z, dtype=np.float64).copy()
    return ChainState(z=z, loglik=float(loglik_fn(z)))


def pcn_step(state: ChainState, beta: float, loglik_fn: LogLikelihood, rng: np.random.Generator) -> ChainState:
    """One proposal and one likelihood evaluation."""
    xi = rng.standard_normal(state.z.size)
    proposal = np.sqrt(1.0 - beta ** 2) * state.z + beta * xi
    proposal_loglik = float(loglik_fn(proposal))
    log_alpha = min(0.0, proposal_loglik - state.loglik)
    accept = rng.random() < np.exp(log_alpha)
    if accept:
        return ChainState(proposal, proposal_loglik, state.accepted + 1, state.steps + 1, True)
    return replace(state, steps=state.steps + 1, last_accepted=False)


def latent_loglik(backend: GradientBackend, decoder: Decoder) -> LogLikelihood:
    def loglik(z: np.ndarray) -> float:
        return -latent_misfit(z, backend, decoder)

    return loglik


def batch_means_variance(samples: np.ndarray, n_batches: Optional[int] = None) -> np.ndarray:
    """Batch-means estimate of the asymptotic variance of the chain mean, per coordinate."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    batch_size = max(1, n // n_batches) if n_batches else max(1, int(np.sqrt(n)))
    a = n // batch_size
    if a < 2:
        raise DomainError(f"[ERROR] Need at least two batches, got {a} from {n} samples")
    means = samples[: a * batch_size].reshape(a, batch_size, -1).mean(axis=1)
    return batch_size * np.var(means, axis=0, ddof=1)


def batch_means_ess(samples: np.ndarray, n_batches: Optional[int] = None) -> np.ndarray:
    """Effective sample size n * s^2 / sigma_bm^2; 0 for coordinates that never move."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    sigma_bm = batch_means_variance(samples, n_batches)
    s2 = np.var(samples, axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sigma_bm > 0, n * s2 / sigma_bm, 0.0)


def batch_means_stderr(samples: np.ndarray, n_batches: Optional[int] = None) -> np.ndarray:
    """Standard error of the chain mean per coordinate."""
    n = np.asarray(samples).shape[0]
    return np.sqrt(batch_means_variance(samples, n_batches) / n)


def run_chain_with(
    config: PCNConfig,
    loglik_fn: LogLikelihood,
    z0: np.ndarray,
    rng: np.random.Generator,
    chain_path: Optional[str] = None,
) -> ChainResult:
    """
    Run one chain from z0 for config.iterations steps.

    Keeps the states after burn-in, every config.thin-th one.
    """
    logger = get_logger("pcn")
    state = initial_state(z0, loglik_fn)
    kept: List[np.ndarray] = []
    loglik = np.empty(config.iterations)
    accepted = np.zeros(config.iterations, dtype=bool)

    logger.log_phase("[pCN]", f"beta={config.beta}, N_ite={config.iterations}, N_b={config.burn_in}")
    for it in range(config.iterations):
        state = pcn_step(state, config.beta, loglik_fn, rng)
        loglik[it] = state.loglik
        accepted[it] = state.last_accepted
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            kept.append(state.z)
        if config.log_every and it % config.log_every == 0:
            logger.log_iteration(it, f"loglik {state.loglik:.6g}, accepted {state.accepted}")

    samples = np.array(kept)
    rate = state.accepted / config.iterations
    ess = batch_means_ess(samples) if samples.shape[0] >= 4 else np.zeros(state.z.size)
    logger.log_state(acceptance_rate=rate, min_ess=float(np.min(ess)))
    if chain_path is not None:
        write_csv(chain_path, CHAIN_COLUMNS, [(i, int(a), l) for i, (a, l) in enumerate(zip(accepted, loglik))])
    return ChainResult(samples=samples, acceptance_rate=rate, ess=ess, loglik=loglik, accepted=accepted, final_state=state)


def run_chain(
    config: PCNConfig,
    backend: GradientBackend,
    decoder: Decoder,
    rng: np.random.Generator,
    z0: Optional[np.ndarray] = None,
    chain_path: Optional[str] = None,
) -> ChainResult:
    """pCN chain for the latent posterior; starts from a prior draw unless z0 is given."""
    if z0 is None:
        z0 = rng.standard_normal(decoder.latent_dim)
    return run_chain_with(config, latent_loglik(backend, decoder), z0, rng, chain_path)


def run_chains(
    config: PCNConfig,
    backend: GradientBackend,
    decoder: Decoder,
    master_seed: int,
    n_chains: int,
    workers: int = 1,
) -> List[ChainResult]:
    """Independent chains with streams derived from (master_seed, chain index)."""
    context = get_run_context()

    def job(index: int) -> ChainResult:
        if context is not None:
            set_run_context(context)
        try:
            return run_chain(config, backend, decoder, sample_stream(master_seed, index))
        finally:
            if context is not None:
                clear_run_context()

    if workers <= 1:
        return [run_chain(config, backend, decoder, sample_stream(master_seed, i)) for i in range(n_chains)]
    with ThreadPool(workers) as pool:
        return pool.map(job, range(n_chains))


def pooled_samples(results: List[ChainResult]) -> Tuple[np.ndarray, float]:
    """Concatenated samples and the mean acceptance rate of several chains."""
    return np.concatenate([r.samples for r in results]), float(np.mean([r.acceptance_rate for r in results]))
