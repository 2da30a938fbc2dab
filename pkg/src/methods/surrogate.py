"""
Physics-constrained surrogate k -> (p, vx, vy), trained on PDE and boundary
residuals only (no solver labels).

Derivatives inside the loss come from torch.gradient with edge_order=2
(central differences, one-sided second order at the outermost cells). The
PDE residual is averaged over interior cells, so the grid needs at least 3
cells per axis.
"""

from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.methods.diff_engine import DTYPE, ParamLayout, ParamVector, make_optimizer, make_scheduler
from src.methods.networks import as_tensor, conv_apply, conv_shapes, init_uniform, mlp_apply, mlp_shapes
from src.physics.darcy import P_LEFT, P_RIGHT
from src.utils.errors import DomainError, TrainingAbortedError
from src.utils.grid_field import FieldDataset, Grid2D, ObservationPlan, ObservationSet, ScalarField, observation_matrix
from src.utils.evaluation_counter import increment_evaluation
from src.utils.logger import get_logger

OUTPUT_CHANNELS = 3
MLP_HIDDEN_LAYERS = 3
CONV_LEVELS = 3


@dataclass(frozen=True)
class SurrogateConfig:
    nx: int
    ny: int
    backend: str = "mlp"
    hidden: int = 512
    channels: int = 16
    gamma: float = 10.0
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    schedule: str = "constant"
    f_const: float = 3.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DomainError(f"[ERROR] Surrogate stencils need a grid of at least 3x3, got {self.nx}x{self.ny}")
        if self.gamma <= 0:
            raise DomainError(f"[ERROR] Boundary penalty gamma must be > 0, got {self.gamma}")
        if self.backend not in ("mlp", "conv"):
            raise DomainError(f"[ERROR] Unknown surrogate backend '{self.backend}'")
        if self.schedule not in ("constant", "one-cycle"):
            raise DomainError(f"[ERROR] Unknown learning-rate schedule '{self.schedule}'")

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.nx, self.ny)

    def to_metadata(self) -> Dict[str, str]:
        meta = {key: str(value) for key, value in asdict(self).items()}
        meta["stencil"] = "central-2nd-order,one-sided-2nd-order-at-edges"
        return meta

    @classmethod
    def from_metadata(cls, meta: Dict[str, str]) -> "SurrogateConfig":
        kinds = {"nx": int, "ny": int, "hidden": int, "channels": int, "epochs": int, "batch_size": int,
                 "gamma": float, "lr": float, "f_const": float, "backend": str, "schedule": str}
        return cls(**{key: kinds[key](value) for key, value in meta.items() if key in kinds})


@dataclass(frozen=True)
class SurrogatePrediction:
    p: ScalarField
    vx: ScalarField
    vy: ScalarField


def surrogate_layout(config: SurrogateConfig) -> ParamLayout:
    m = config.nx * config.ny
    if config.backend == "mlp":
        widths = [m] + [config.hidden] * MLP_HIDDEN_LAYERS + [OUTPUT_CHANNELS * m]
        return ParamLayout.from_shapes(mlp_shapes("net", widths))
    c = config.channels
    channels = [1, c, 2 * c, 4 * c, 4 * c, 2 * c, c, c, OUTPUT_CHANNELS]
    return ParamLayout.from_shapes(conv_shapes("conv", channels))


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    params: ParamVector
    config: SurrogateConfig

    def save(self, path: str) -> None:
        self.params.save(path, meta={"surrogateconfig": self.config.to_metadata()})

    @classmethod
    def load(cls, path: str) -> "SurrogateModel":
        params, meta = ParamVector.load(path)
        config = SurrogateConfig.from_metadata(meta.get("surrogateconfig", {}))
        if params.layout != surrogate_layout(config):
            raise DomainError(f"[ERROR] Parameter layout in {path} does not match its surrogateconfig")
        return cls(params=params, config=config)


def init_surrogate(config: SurrogateConfig, rng: np.random.Generator, zero: bool = False) -> SurrogateModel:
    return SurrogateModel(params=init_uniform(surrogate_layout(config), rng, zero=zero), config=config)


def predict_flat(flat: torch.Tensor, layout: ParamLayout, config: SurrogateConfig, k: torch.Tensor) -> torch.Tensor:
    """k of shape (B, ny*nx) -> outputs of shape (B, 3, ny, nx) holding p, vx, vy."""
    batch = k.shape[0]
    if config.backend == "mlp":
        out = mlp_apply(flat, layout, "net", MLP_HIDDEN_LAYERS + 1, k, torch.tanh)
        return out.view(batch, OUTPUT_CHANNELS, config.ny, config.nx)

    # encoder-decoder: CONV_LEVELS stride-2 convolutions down, bilinear upsampling back
    h = torch.tanh(conv_apply(flat, layout, "conv", 0, k.view(batch, 1, config.ny, config.nx)))
    sizes = []
    for level in range(CONV_LEVELS):
        sizes.append(tuple(h.shape[-2:]))
        h = torch.tanh(conv_apply(flat, layout, "conv", 1 + level, h, stride=2))
    for level in range(CONV_LEVELS):
        h = F.interpolate(h, size=sizes.pop(), mode="bilinear", align_corners=False)
        h = torch.tanh(conv_apply(flat, layout, "conv", 1 + CONV_LEVELS + level, h))
    return conv_apply(flat, layout, "conv", 1 + 2 * CONV_LEVELS, h)


def _check_field(k: ScalarField, config: SurrogateConfig) -> None:
    if (k.grid.nx, k.grid.ny) != (config.nx, config.ny):
        raise DomainError(
            f"[ERROR] Field grid {k.grid.nx}x{k.grid.ny} does not match surrogate grid {config.nx}x{config.ny}"
        )


def predict(model: SurrogateModel, k: ScalarField) -> SurrogatePrediction:
    _check_field(k, model.config)
    with torch.no_grad():
        out = predict_flat(model.params.values, model.params.layout, model.config, as_tensor(k.values).unsqueeze(0))[0]
    grid = k.grid
    return SurrogatePrediction(
        p=ScalarField(grid, out[0].numpy()),
        vx=ScalarField(grid, out[1].numpy()),
        vy=ScalarField(grid, out[2].numpy()),
    )


def residual_terms(
    out: torch.Tensor, k: torch.Tensor, grid: Grid2D, f_const: float, gamma: float
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Batch-averaged residual loss.

    out is (B, 3, ny, nx), k is (B, ny, nx). Returns (J, J_pde, J_b) with
    J_pde the mean over interior cells of (div v - f)^2 + |v + exp(k) grad p|^2
    and J_b one mean over the 2 ny + 2 nx boundary conditions (p = 1 on the
    left column, p = 0 on the right, vy = 0 on the top and bottom rows).
    Corner cells contribute once per condition they carry.
    """
    p, vx, vy = out[:, 0], out[:, 1], out[:, 2]
    spacing = [grid.hy, grid.hx]
    dp_dy, dp_dx = torch.gradient(p, spacing=spacing, dim=[-2, -1], edge_order=2)
    (dvx_dx,) = torch.gradient(vx, spacing=[grid.hx], dim=[-1], edge_order=2)
    (dvy_dy,) = torch.gradient(vy, spacing=[grid.hy], dim=[-2], edge_order=2)
    cond = torch.exp(k)

    conservation = (dvx_dx + dvy_dy - f_const) ** 2
    darcy = (vx + cond * dp_dx) ** 2 + (vy + cond * dp_dy) ** 2
    j_pde = torch.mean((conservation + darcy)[:, 1:-1, 1:-1])

    violations = torch.cat(
        [(p[:, :, 0] - P_LEFT) ** 2, (p[:, :, -1] - P_RIGHT) ** 2, vy[:, 0, :] ** 2, vy[:, -1, :] ** 2], dim=1
    )
    j_b = torch.mean(violations)
    return j_pde + gamma * j_b, j_pde, j_b


def residual_loss(prediction: SurrogatePrediction, k: ScalarField, f_const: float = 3.0, gamma: float = 10.0) -> Tuple[float, float, float]:
    """(J, J_pde, J_b) for one predicted triple, J = J_pde + gamma * J_b."""
    grid = k.grid
    if prediction.p.grid != grid or prediction.vx.grid != grid or prediction.vy.grid != grid:
        raise DomainError("[ERROR] Prediction and permeability field are on different grids")
    out = torch.stack([as_tensor(f.as_array()) for f in (prediction.p, prediction.vx, prediction.vy)]).unsqueeze(0)
    total, j_pde, j_b = residual_terms(out, as_tensor(k.as_array()).unsqueeze(0), grid, f_const, gamma)
    return float(total), float(j_pde), float(j_b)


def loss_program(config: SurrogateConfig):
    """DiffProgram over the surrogate parameters; aux = batch of k vectors (B, ny*nx)."""
    layout = surrogate_layout(config)
    grid = config.grid

    def surrogate_residual(flat: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        out = predict_flat(flat, layout, config, k)
        total, _, _ = residual_terms(out, k.view(-1, config.ny, config.nx), grid, config.f_const, config.gamma)
        return total

    return surrogate_residual


def train_surrogate(
    dataset: FieldDataset,
    config: SurrogateConfig,
    rng: np.random.Generator,
    init: Optional[SurrogateModel] = None,
) -> Tuple[SurrogateModel, List[float]]:
    """
    Adam descent on the minibatch residual loss.

    Returns:
        The trained model and the per-epoch mean J
    """
    if len(dataset) == 0:
        raise DomainError("[ERROR] Cannot train the surrogate on an empty dataset")
    if (dataset.grid.nx, dataset.grid.ny) != (config.nx, config.ny):
        raise DomainError("[ERROR] Dataset grid does not match the surrogate configuration")

    logger = get_logger("train_surrogate")
    data = as_tensor(dataset.as_matrix())
    n = data.shape[0]
    n_batches = (n + config.batch_size - 1) // config.batch_size
    program = loss_program(config)

    model = init if init is not None else init_surrogate(config, rng)
    layout = model.params.layout
    flat = model.params.values.clone().requires_grad_(True)
    optimizer = make_optimizer("adam", [{"params": [flat]}], lr=config.lr)
    scheduler = make_scheduler(optimizer, config.schedule, config.lr, config.epochs * n_batches)

    trace: List[float] = []
    logger.log_phase("[Training surrogate]", f"N={n}, backend={config.backend}, gamma={config.gamma}")
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for batch_idx in range(n_batches):
            batch = data[order[batch_idx * config.batch_size:(batch_idx + 1) * config.batch_size]]
            optimizer.zero_grad()
            loss = program(flat, batch)
            if not torch.isfinite(loss):
                raise TrainingAbortedError("Non-finite residual loss while training the surrogate", epoch, batch_idx)
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            total += float(loss.detach()) * batch.shape[0]
        trace.append(total / n)
        logger.log_iteration(epoch, f"mean J {trace[-1]:.6g}")

    return SurrogateModel(params=ParamVector(flat.detach(), layout), config=config), trace


def observation_tensor(grid: Grid2D, plan: ObservationPlan) -> torch.Tensor:
    return torch.as_tensor(observation_matrix(grid, plan).toarray(), dtype=DTYPE)


def surrogate_forward(model: SurrogateModel, k: ScalarField, plan: ObservationPlan) -> np.ndarray:
    """F_hat(k): predicted pressure at the observation locations."""
    return observation_matrix(k.grid, plan) @ predict(model, k).p.values


def surrogate_misfit_and_grad(
    model: SurrogateModel, k: ScalarField, plan: ObservationPlan, obs: ObservationSet
) -> Tuple[float, ScalarField]:
    """Phi_hat(k) and its reverse-mode gradient with respect to the k field (weights held fixed)."""
    _check_field(k, model.config)
    if len(plan) != len(obs):
        raise DomainError(f"[ERROR] Plan has {len(plan)} locations, observations have {len(obs)}")
    k_t = as_tensor(k.values).unsqueeze(0).requires_grad_(True)
    out = predict_flat(model.params.values, model.params.layout, model.config, k_t)
    predicted = observation_tensor(k.grid, plan) @ out[0, 0].reshape(-1)
    r = (predicted - as_tensor(obs.noisy)) / as_tensor(obs.sigma)
    value = 0.5 * torch.sum(r ** 2)
    (grad,) = torch.autograd.grad(value, k_t)
    increment_evaluation("surrogate")
    return float(value.detach()), ScalarField(k.grid, grad[0].numpy())


def surrogate_misfit_grad_k(model: SurrogateModel, k: ScalarField, plan: ObservationPlan, obs: ObservationSet) -> ScalarField:
    _, grad = surrogate_misfit_and_grad(model, k, plan, obs)
    return grad
