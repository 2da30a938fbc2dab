"""
Forward/gradient backends and latent decoders shared by VI, pCN and the
diagnostics.

A backend owns the observations and maps a flat parameter vector k to
(Phi(k), dPhi/dk). A decoder is a differentiable torch map z -> k. The
chain rule through the decoder is done once here, so inference code never
cares which backend produced dPhi/dk.
"""

from typing import Protocol, Tuple

import numpy as np
import scipy.linalg as sla
import torch

from src.methods.diff_engine import DTYPE
from src.methods.surrogate import SurrogateModel, surrogate_forward, surrogate_misfit_and_grad
from src.physics import darcy
from src.utils.errors import DomainError, NumericalError
from src.utils.evaluation_counter import increment_evaluation
from src.utils.grid_field import Grid2D, ObservationPlan, ObservationSet, ScalarField


class GradientBackend(Protocol):
    name: str

    def misfit(self, k: np.ndarray) -> float:
        ...

    def misfit_and_grad(self, k: np.ndarray) -> Tuple[float, np.ndarray]:
        ...


class Decoder(Protocol):
    latent_dim: int

    def __call__(self, z: torch.Tensor) -> torch.Tensor:
        ...


class AdjointBackend:
    """Finite-volume solver with the discrete adjoint gradient."""

    name = "adjoint"

    def __init__(self, grid: Grid2D, plan: ObservationPlan, obs: ObservationSet, f_const: float = 3.0):
        if len(plan) != len(obs):
            raise DomainError(f"[ERROR] Plan has {len(plan)} locations, observations have {len(obs)}")
        self.grid = grid
        self.plan = plan
        self.obs = obs
        self.f_const = f_const

    def misfit(self, k: np.ndarray) -> float:
        return darcy.misfit(ScalarField(self.grid, k), self.plan, self.obs, self.f_const)

    def misfit_and_grad(self, k: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = darcy.misfit_and_grad(ScalarField(self.grid, k), self.plan, self.obs, self.f_const)
        return value, grad.values.copy()


class WrappedAdjointSurrogate(AdjointBackend):
    """The adjoint solver presented in the surrogate's place; agreement against the adjoint is exactly 1."""

    name = "wrapped-adjoint"


class SurrogateBackend:
    name = "surrogate"

    def __init__(self, model: SurrogateModel, plan: ObservationPlan, obs: ObservationSet):
        if len(plan) != len(obs):
            raise DomainError(f"[ERROR] Plan has {len(plan)} locations, observations have {len(obs)}")
        self.model = model
        self.grid = model.config.grid
        self.plan = plan
        self.obs = obs

    def misfit(self, k: np.ndarray) -> float:
        predicted = surrogate_forward(self.model, ScalarField(self.grid, k), self.plan)
        increment_evaluation("surrogate")
        return darcy.misfit_from_prediction(predicted, self.obs)

    def misfit_and_grad(self, k: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = surrogate_misfit_and_grad(self.model, ScalarField(self.grid, k), self.plan, self.obs)
        return value, grad.values.copy()


class LinearBackend:
    """F(k) = B k with Gaussian noise; used for closed-form checks."""

    name = "linear"

    def __init__(self, forward_map: np.ndarray, obs: ObservationSet):
        self.forward_map = np.atleast_2d(np.asarray(forward_map, dtype=np.float64))
        if self.forward_map.shape[0] != len(obs):
            raise DomainError("[ERROR] Linear forward map rows must equal the number of observations")
        self.obs = obs

    def misfit(self, k: np.ndarray) -> float:
        increment_evaluation("forward")
        r = (self.forward_map @ k - self.obs.noisy) / self.obs.sigma
        return 0.5 * float(r @ r)

    def misfit_and_grad(self, k: np.ndarray) -> Tuple[float, np.ndarray]:
        increment_evaluation("forward")
        r = (self.forward_map @ k - self.obs.noisy) / self.obs.sigma
        return 0.5 * float(r @ r), self.forward_map.T @ (r / self.obs.sigma)


class FlatLikelihoodBackend:
    """Phi(k) = 0 everywhere; inference then targets the prior."""

    name = "flat"

    def misfit(self, k: np.ndarray) -> float:
        return 0.0

    def misfit_and_grad(self, k: np.ndarray) -> Tuple[float, np.ndarray]:
        return 0.0, np.zeros_like(np.asarray(k, dtype=np.float64))


class LinearDecoder:
    """G(z) = A z."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = torch.as_tensor(np.atleast_2d(np.asarray(matrix, dtype=np.float64)), dtype=DTYPE)
        self.latent_dim = self.matrix.shape[1]

    def __call__(self, z: torch.Tensor) -> torch.Tensor:
        return z @ self.matrix.T


def decode_numpy(decoder: Decoder, z: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return decoder(torch.as_tensor(z, dtype=DTYPE)).numpy()


def latent_misfit(z: np.ndarray, backend: GradientBackend, decoder: Decoder) -> float:
    """Phi(G(z))."""
    return backend.misfit(decode_numpy(decoder, z))


def latent_misfit_and_grad(z: np.ndarray, backend: GradientBackend, decoder: Decoder) -> Tuple[float, np.ndarray]:
    """
    Phi(G(z)) and its gradient with respect to z.

    dPhi/dk comes from the backend and is pulled back through the decoder
    with one vector-Jacobian product.
    """
    z_t = torch.as_tensor(z, dtype=DTYPE).clone().requires_grad_(True)
    k_t = decoder(z_t)
    value, grad_k = backend.misfit_and_grad(k_t.detach().numpy())
    if not np.isfinite(value) or not np.all(np.isfinite(grad_k)):
        raise NumericalError(f"[ERROR] Non-finite misfit or gradient from backend '{backend.name}'")
    (grad_z,) = torch.autograd.grad(k_t, z_t, grad_outputs=torch.as_tensor(grad_k, dtype=DTYPE))
    return value, grad_z.numpy()


def conjugate_posterior(
    decoder_map: np.ndarray, forward_map: np.ndarray, obs: ObservationSet
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form posterior N(m, S) of z for d = B A z + noise, z ~ N(0, I).

    S = (G^T W G + I)^-1 and m = S G^T W d with G = B A, W = diag(1/sigma^2).
    """
    g = np.atleast_2d(forward_map) @ np.atleast_2d(decoder_map)
    w = 1.0 / obs.sigma ** 2
    precision = g.T @ (w[:, None] * g) + np.eye(g.shape[1])
    factor = sla.cho_factor(precision)
    cov = sla.cho_solve(factor, np.eye(g.shape[1]))
    mean = sla.cho_solve(factor, g.T @ (w * obs.noisy))
    return mean, cov
