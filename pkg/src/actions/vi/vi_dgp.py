"""
Variational inference in the latent space of the generative prior.

q(z) = N(mu, diag(exp(logvar))) is fitted by stochastic ascent on
L = E_q[log pi(z, d)] + H[q] with reparameterized draws z = mu + sigma * eps.
Constants are dropped throughout:

    log pi(z, d) = -Phi(G(z)) - 1/2 ||z||^2
    H[q]         = sum_i (1/2 logvar_i + 1/2 log(2 pi e))
"""

import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from src.methods.diff_engine import DTYPE, make_optimizer
from src.shared.backends import Decoder, GradientBackend, decode_numpy, latent_misfit, latent_misfit_and_grad
from src.utils.csv_io import write_csv
from src.utils.errors import DomainError, NumericalError, TrainingAbortedError
from src.utils.grid_field import ScalarField
from src.utils.logger import get_logger

HALF_LOG_2PI_E = 0.5 * np.log(2.0 * np.pi * np.e)
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
ENTROPY_MODES = ("closed-form", "mc-stl", "mc-full")
DECODE_CHUNK = 1000
TRACE_COLUMNS = ["iter", "elbo_estimate", "grad_norm_mu", "grad_norm_logvar", "wall_ms"]


@dataclass(frozen=True, eq=False)
class VariationalParams:
    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).ravel()
        logvar = np.array(self.logvar, dtype=np.float64).ravel()
        if mu.shape != logvar.shape:
            raise DomainError("[ERROR] mu and logvar must have the same length")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
            raise DomainError("[ERROR] Variational parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "logvar", logvar)

    @classmethod
    def zeros(cls, dim: int) -> "VariationalParams":
        return cls(np.zeros(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar)

    def draw(self, eps: np.ndarray) -> np.ndarray:
        return self.mu + self.sigma * eps


@dataclass(frozen=True)
class VIConfig:
    iterations: int = 5000
    samples: int = 1
    lr_mu: float = 8e-4
    lr_logvar: float = 8e-4
    entropy: str = "closed-form"
    optimizer: str = "sgd"
    clip: float = 0.0
    n_posterior: int = 10000
    record_timing: bool = True
    log_every: int = 100

    def __post_init__(self):
        if self.samples < 1:
            raise DomainError(f"[ERROR] At least one sample per iteration is needed, got {self.samples}")
        if self.lr_mu <= 0 or self.lr_logvar <= 0:
            raise DomainError("[ERROR] Learning rates must be > 0")
        if self.entropy not in ENTROPY_MODES:
            raise DomainError(f"[ERROR] Unknown entropy mode '{self.entropy}'")


@dataclass(frozen=True)
class ELBOGradient:
    mu: np.ndarray
    logvar: np.ndarray
    elbo_estimate: float


def log_joint(z: np.ndarray, backend: GradientBackend, decoder: Decoder) -> float:
    """log pi(z, d) = -Phi(G(z)) - 1/2 ||z||^2; the observations live in the backend."""
    z = np.asarray(z, dtype=np.float64)
    return -latent_misfit(z, backend, decoder) - 0.5 * float(z @ z)


def entropy_closed_form(logvar: np.ndarray) -> float:
    return float(np.sum(0.5 * np.asarray(logvar) + HALF_LOG_2PI_E))


def entropy_monte_carlo(logvar: np.ndarray, eps: np.ndarray) -> float:
    """-(1/M) sum_m log q(z_m) for z_m = mu + sigma * eps_m; mu drops out."""
    eps = np.atleast_2d(eps)
    per_draw = np.sum(HALF_LOG_2PI + 0.5 * np.asarray(logvar) + 0.5 * eps ** 2, axis=1)
    return float(np.mean(per_draw))


def _entropy(params: VariationalParams, eps: np.ndarray, mode: str) -> float:
    if mode == "closed-form":
        return entropy_closed_form(params.logvar)
    return entropy_monte_carlo(params.logvar, eps)


def elbo_vi(
    params: VariationalParams,
    backend: GradientBackend,
    decoder: Decoder,
    eps: np.ndarray,
    entropy: str = "closed-form",
) -> float:
    """Monte Carlo lower bound with the given draws eps of shape (M_s, h)."""
    eps = np.atleast_2d(eps)
    joint = np.mean([log_joint(params.draw(e), backend, decoder) for e in eps])
    return float(joint) + _entropy(params, eps, entropy)


def grad_elbo_vi(
    params: VariationalParams,
    backend: GradientBackend,
    decoder: Decoder,
    eps: np.ndarray,
    entropy: str = "closed-form",
) -> ELBOGradient:
    """
    Pathwise gradient of elbo_vi over (mu, logvar), averaged over the draws.

    For each draw, d log pi / dz = -(dPhi/dk)(dG/dz) - z is chained through
    dz/dmu = I and dz/dlogvar = 1/2 sigma eps. Entropy enters as:
      closed-form: dH/dlogvar = 1/2
      mc-stl:      score term removed, leaving eps/sigma for mu and 1/2 eps^2 for logvar
      mc-full:     path and score terms cancel, same as closed-form
    """
    if entropy not in ENTROPY_MODES:
        raise DomainError(f"[ERROR] Unknown entropy mode '{entropy}'")
    eps = np.atleast_2d(eps)
    if eps.shape[1] != params.dim:
        raise DomainError(f"[ERROR] Noise draws have dimension {eps.shape[1]}, expected {params.dim}")
    sigma = params.sigma
    grad_mu = np.zeros(params.dim)
    grad_logvar = np.zeros(params.dim)
    joint = 0.0
    for e in eps:
        z = params.mu + sigma * e
        phi, grad_z = latent_misfit_and_grad(z, backend, decoder)
        dlog_dz = -grad_z - z
        joint += -phi - 0.5 * float(z @ z)
        grad_mu += dlog_dz
        grad_logvar += dlog_dz * 0.5 * sigma * e
        if entropy == "mc-stl":
            grad_mu += e / sigma
            grad_logvar += 0.5 * e ** 2
        else:
            grad_logvar += 0.5

    m = eps.shape[0]
    estimate = joint / m + _entropy(params, eps, entropy)
    return ELBOGradient(mu=grad_mu / m, logvar=grad_logvar / m, elbo_estimate=estimate)


def optimize(
    config: VIConfig,
    backend: GradientBackend,
    decoder: Decoder,
    rng: np.random.Generator,
    init: Optional[VariationalParams] = None,
    trace_path: Optional[str] = None,
) -> Tuple[VariationalParams, List[Tuple[int, float, float, float, float]]]:
    """
    Stochastic ascent on the lower bound for config.iterations steps.

    Args:
        config: Iterations, draws per step, learning rates and entropy mode
        backend: Source of Phi and dPhi/dk
        decoder: Generator z -> k
        rng: Stream for the eps draws
        init: Starting point, zero vectors when None
        trace_path: When given, the trace is also written there as CSV

    Returns:
        (optimized parameters, trace rows matching TRACE_COLUMNS)
    """
    logger = get_logger("vi_dgp")
    start = init if init is not None else VariationalParams.zeros(decoder.latent_dim)
    mu = torch.as_tensor(start.mu, dtype=DTYPE).clone().requires_grad_(True)
    logvar = torch.as_tensor(start.logvar, dtype=DTYPE).clone().requires_grad_(True)
    optimizer = make_optimizer(
        config.optimizer,
        [{"params": [mu], "lr": config.lr_mu}, {"params": [logvar], "lr": config.lr_logvar}],
        lr=config.lr_mu,
        maximize=True,
    )

    logger.log_phase("[VI]", f"backend={backend.name}, N_opt={config.iterations}, M_s={config.samples}, entropy={config.entropy}")
    trace = []
    current = start
    for it in range(config.iterations):
        tic = time.perf_counter()
        eps = rng.standard_normal((config.samples, start.dim))
        try:
            grad = grad_elbo_vi(current, backend, decoder, eps, config.entropy)
        except NumericalError as exc:
            raise TrainingAbortedError(f"Lower-bound gradient failed ({exc})", it) from exc

        optimizer.zero_grad()
        mu.grad = torch.as_tensor(grad.mu, dtype=DTYPE)
        logvar.grad = torch.as_tensor(grad.logvar, dtype=DTYPE)
        if config.clip > 0:
            torch.nn.utils.clip_grad_norm_([mu, logvar], config.clip)
        optimizer.step()

        if not (torch.all(torch.isfinite(mu)) and torch.all(torch.isfinite(logvar))):
            raise TrainingAbortedError("Non-finite variational parameters", it)
        current = VariationalParams(mu.detach().numpy(), logvar.detach().numpy())

        wall_ms = (time.perf_counter() - tic) * 1000.0 if config.record_timing else 0.0
        trace.append((it, grad.elbo_estimate, float(np.linalg.norm(grad.mu)), float(np.linalg.norm(grad.logvar)), wall_ms))
        if config.log_every and it % config.log_every == 0:
            logger.log_iteration(it, f"elbo {grad.elbo_estimate:.6g}")

    logger.log_state(final_elbo=trace[-1][1] if trace else float("nan"))
    if trace_path is not None:
        write_csv(trace_path, TRACE_COLUMNS, trace)
    return current, trace


def posterior_latent_sample(params: VariationalParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, h) draws from q."""
    return params.mu + params.sigma * rng.standard_normal((n, params.dim))


def posterior_sample(params: VariationalParams, decoder: Decoder, n: int, rng: np.random.Generator) -> List[ScalarField]:
    """N_s decoded fields G(z), z ~ q."""
    grid = getattr(decoder, "grid", None)
    if grid is None:
        raise DomainError("[ERROR] posterior_sample needs a decoder that produces fields on a grid")
    latent = posterior_latent_sample(params, n, rng)
    samples = []
    for start in range(0, n, DECODE_CHUNK):
        fields = decode_numpy(decoder, latent[start:start + DECODE_CHUNK])
        samples.extend(ScalarField(grid, row) for row in np.atleast_2d(fields))
    return samples
