"""
Deep generative prior: a fully connected variational autoencoder.

Encoder  k -> Linear(M,h) ReLU Linear(h,h) ReLU -> two branches
         Linear(h,h) ReLU Linear(h,h) giving mu and log sigma^2.
Decoder  z -> Linear(h,H) act Linear(H,H) act Linear(H,H) act Linear(H,M)
         with act = ReLU (GRF) or Sigmoid (channel) and a final Sigmoid
         for the channel case. H defaults to M.

The reconstruction likelihood is N(k; G(z), I) with constants dropped, so
log p(k|z) = -1/2 ||k - G(z)||^2.
"""

from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from src.methods.diff_engine import DTYPE, ParamLayout, ParamVector, make_optimizer
from src.methods.networks import ACTIVATIONS, as_tensor, init_uniform, mlp_apply, mlp_shapes
from src.priors.datasets import Normalization, dataset_normalization
from src.utils.errors import DomainError, TrainingAbortedError
from src.utils.grid_field import FieldDataset, Grid2D, ScalarField
from src.utils.logger import get_logger

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class VAEConfig:
    nx: int
    ny: int
    latent_dim: int
    decoder_hidden: int = 0
    decoder_activation: str = "relu"
    output_sigmoid: bool = False
    mc_samples: int = 1
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-4
    norm_offset: float = 0.0
    norm_scale: float = 1.0

    def __post_init__(self):
        if self.latent_dim < 1 or self.latent_dim >= self.input_dim:
            raise DomainError(f"[ERROR] latent_dim must lie in [1, {self.input_dim}), got {self.latent_dim}")
        if self.decoder_activation not in ("relu", "sigmoid"):
            raise DomainError(f"[ERROR] Unknown decoder activation '{self.decoder_activation}'")
        if self.mc_samples < 1:
            raise DomainError("[ERROR] mc_samples must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.nx * self.ny

    @property
    def hidden(self) -> int:
        return self.decoder_hidden if self.decoder_hidden > 0 else self.input_dim

    @property
    def normalization(self) -> Normalization:
        return Normalization(offset=self.norm_offset, scale=self.norm_scale)

    @classmethod
    def for_prior(cls, prior: str, grid: Grid2D, latent_dim: int, normalization: Normalization, **kwargs) -> "VAEConfig":
        """ReLU decoder for GRF fields, Sigmoid decoder with Sigmoid output for channel fields."""
        channel = prior == "channel"
        return cls(
            nx=grid.nx, ny=grid.ny, latent_dim=latent_dim,
            decoder_activation="sigmoid" if channel else "relu",
            output_sigmoid=channel,
            norm_offset=normalization.offset, norm_scale=normalization.scale,
            **kwargs,
        )

    def to_metadata(self) -> Dict[str, str]:
        return {key: str(value) for key, value in asdict(self).items()}

    @classmethod
    def from_metadata(cls, meta: Dict[str, str]) -> "VAEConfig":
        kinds = {"nx": int, "ny": int, "latent_dim": int, "decoder_hidden": int, "mc_samples": int,
                 "epochs": int, "batch_size": int, "lr": float, "norm_offset": float, "norm_scale": float,
                 "decoder_activation": str, "output_sigmoid": lambda s: s == "True"}
        return cls(**{key: kinds[key](value) for key, value in meta.items() if key in kinds})


def vae_layout(config: VAEConfig) -> ParamLayout:
    h, m, hidden = config.latent_dim, config.input_dim, config.hidden
    shapes = (
        mlp_shapes("enc", [m, h, h])
        + mlp_shapes("enc_mu", [h, h, h])
        + mlp_shapes("enc_logvar", [h, h, h])
        + mlp_shapes("dec", [h, hidden, hidden, hidden, m])
    )
    return ParamLayout.from_shapes(shapes)


@dataclass(frozen=True, eq=False)
class VAEModel:
    """Encoder parameters phi are the 'enc*' blocks, decoder parameters theta the 'dec' blocks."""

    params: ParamVector
    config: VAEConfig

    def save(self, path: str) -> None:
        self.params.save(path, meta={"vaeconfig": self.config.to_metadata()})

    @classmethod
    def load(cls, path: str) -> "VAEModel":
        params, meta = ParamVector.load(path)
        config = VAEConfig.from_metadata(meta.get("vaeconfig", {}))
        if params.layout != vae_layout(config):
            raise DomainError(f"[ERROR] Parameter layout in {path} does not match its vaeconfig")
        return cls(params=params, config=config)


def init_vae(config: VAEConfig, rng: np.random.Generator, zero: bool = False) -> VAEModel:
    return VAEModel(params=init_uniform(vae_layout(config), rng, zero=zero), config=config)


# ---------------------------------------------------------------------
# Functional pieces (operate on the flat tensor so they can be differentiated)
# ---------------------------------------------------------------------

def encode_flat(flat: torch.Tensor, layout: ParamLayout, k: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    hidden = mlp_apply(flat, layout, "enc", 2, k, torch.relu, torch.relu)
    mu = mlp_apply(flat, layout, "enc_mu", 2, hidden, torch.relu)
    logvar = mlp_apply(flat, layout, "enc_logvar", 2, hidden, torch.relu)
    return mu, logvar


def decode_flat(flat: torch.Tensor, layout: ParamLayout, config: VAEConfig, z: torch.Tensor) -> torch.Tensor:
    act = ACTIVATIONS[config.decoder_activation]
    out = torch.sigmoid if config.output_sigmoid else None
    return mlp_apply(flat, layout, "dec", 4, z, act, out)


def _check_length(x: ArrayLike, expected: int, what: str) -> None:
    if x.shape[-1] != expected:
        raise DomainError(f"[ERROR] {what} has length {x.shape[-1]}, expected {expected}")


def encode(model: VAEModel, k: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (mu, log sigma^2) for a normalized field vector (or a batch of them)."""
    _check_length(k, model.config.input_dim, "Field vector")
    with torch.no_grad():
        mu, logvar = encode_flat(model.params.values, model.params.layout, as_tensor(k))
    return mu.numpy(), logvar.numpy()


def reparameterize(mu: ArrayLike, logvar: ArrayLike, eps: ArrayLike) -> ArrayLike:
    """z = mu + exp(logvar / 2) * eps, elementwise."""
    if isinstance(mu, torch.Tensor):
        return mu + torch.exp(0.5 * logvar) * eps
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(eps)


def decode(model: VAEModel, z: ArrayLike) -> np.ndarray:
    """Normalized decoder output G(z)."""
    _check_length(z, model.config.latent_dim, "Latent vector")
    with torch.no_grad():
        return decode_flat(model.params.values, model.params.layout, model.config, as_tensor(z)).numpy()


def kl_diag_gaussian(mu: ArrayLike, logvar: ArrayLike) -> ArrayLike:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) summed over the last axis."""
    if isinstance(mu, torch.Tensor):
        return 0.5 * torch.sum(mu ** 2 + torch.exp(logvar) - 1.0 - logvar, dim=-1)
    mu, logvar = np.asarray(mu), np.asarray(logvar)
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=-1)


def elbo_flat(flat: torch.Tensor, layout: ParamLayout, config: VAEConfig, k: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """
    Mean over the batch of (1/L) sum_l log p(k|z_l) - KL, z_l = mu + sigma * eps_l.

    k has shape (B, M) and eps (L, B, h).
    """
    mu, logvar = encode_flat(flat, layout, k)
    z = reparameterize(mu.unsqueeze(0), logvar.unsqueeze(0), eps)
    recon = decode_flat(flat, layout, config, z)
    log_lik = -0.5 * torch.sum((k.unsqueeze(0) - recon) ** 2, dim=-1).mean(dim=0)
    return torch.mean(log_lik - kl_diag_gaussian(mu, logvar))


def elbo_program(config: VAEConfig):
    """DiffProgram over the VAE parameters; aux = (k batch, eps draws)."""
    layout = vae_layout(config)

    def vae_elbo(flat: torch.Tensor, aux: Tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
        k, eps = aux
        return elbo_flat(flat, layout, config, k, eps)

    return vae_elbo


def elbo(model: VAEModel, k: ArrayLike, eps_draws: ArrayLike) -> float:
    k_t = as_tensor(k)
    if k_t.dim() == 1:
        k_t = k_t.unsqueeze(0)
    eps_t = as_tensor(eps_draws)
    if eps_t.dim() == 1:
        eps_t = eps_t.unsqueeze(0)
    if eps_t.dim() == 2:
        eps_t = eps_t.unsqueeze(1).expand(-1, k_t.shape[0], -1)
    _check_length(k_t, model.config.input_dim, "Field vector")
    _check_length(eps_t, model.config.latent_dim, "Noise draw")
    with torch.no_grad():
        return float(elbo_flat(model.params.values, model.params.layout, model.config, k_t, eps_t))


def train_vae(
    dataset: FieldDataset,
    config: VAEConfig,
    rng: np.random.Generator,
    init: Optional[VAEModel] = None,
) -> Tuple[VAEModel, List[float]]:
    """
    Adam ascent on the minibatch ELBO for config.epochs epochs.

    Shuffles and noise draws come from `rng`, so a fixed seed reproduces the
    parameters exactly.

    Returns:
        The trained model and the per-epoch mean ELBO
    """
    if len(dataset) == 0:
        raise DomainError("[ERROR] Cannot train the generative prior on an empty dataset")
    if (dataset.grid.nx, dataset.grid.ny) != (config.nx, config.ny):
        raise DomainError("[ERROR] Dataset grid does not match the VAE configuration")

    logger = get_logger("train_dgp")
    normalization = dataset_normalization(dataset)
    data = as_tensor(normalization.forward(dataset.as_matrix()))
    n = data.shape[0]

    model = init if init is not None else init_vae(config, rng)
    layout = model.params.layout
    flat = model.params.values.clone().requires_grad_(True)
    optimizer = make_optimizer("adam", [{"params": [flat]}], lr=config.lr, maximize=True)

    trace: List[float] = []
    logger.log_phase("[Training generative prior]", f"N={n}, epochs={config.epochs}, batch={config.batch_size}")
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for batch_idx, start in enumerate(range(0, n, config.batch_size)):
            batch = data[order[start:start + config.batch_size]]
            eps = as_tensor(rng.standard_normal((config.mc_samples, batch.shape[0], config.latent_dim)))
            optimizer.zero_grad()
            value = elbo_flat(flat, layout, config, batch, eps)
            if not torch.isfinite(value):
                raise TrainingAbortedError("Non-finite ELBO while training the generative prior", epoch, batch_idx)
            value.backward()
            optimizer.step()
            total += float(value.detach()) * batch.shape[0]
        trace.append(total / n)
        logger.log_iteration(epoch, f"mean ELBO {trace[-1]:.6g}")

    return VAEModel(params=ParamVector(flat.detach(), layout), config=config), trace


def generate(model: VAEModel, rng: Optional[np.random.Generator] = None, z: Optional[ArrayLike] = None) -> ScalarField:
    """k' = G(z'), z' ~ N(0, I) unless z is given, mapped back to log-permeability units."""
    if z is None:
        if rng is None:
            raise DomainError("[ERROR] generate needs either an rng or an explicit z")
        z = rng.standard_normal(model.config.latent_dim)
    values = model.config.normalization.inverse(decode(model, z))
    return ScalarField(Grid2D(model.config.nx, model.config.ny), values)


class VAEDecoder:
    """Differentiable generator z -> k (log-permeability units) for inference."""

    def __init__(self, model: VAEModel):
        self.model = model
        self.latent_dim = model.config.latent_dim
        self.grid = Grid2D(model.config.nx, model.config.ny)
        self._flat = model.params.values.to(DTYPE)

    def __call__(self, z: torch.Tensor) -> torch.Tensor:
        out = decode_flat(self._flat, self.model.params.layout, self.model.config, z)
        return out * self.model.config.norm_scale + self.model.config.norm_offset
