"""Long-running end-to-end checks; run with `pytest -m slow`."""

import os

import numpy as np
import pytest

from src.actions.vi.vi_dgp import VIConfig, optimize
from src.main import cmd_gen_data, cmd_gradcheck, cmd_infer, cmd_train_dgp, cmd_train_surrogate, infer_dir
from src.methods.diagnostics import moving_average, relative_l2_error
from src.physics.darcy import forward
from src.priors.grf import GRFSpec, covariance_matrix
from src.shared.backends import AdjointBackend, LinearDecoder
from src.utils.config import load_config
from src.utils.csv_io import read_csv
from src.utils.grid_field import Grid2D, ScalarField, add_noise, uniform_observation_plan
from src.utils.logger import set_log_dir

NOISE_LEVELS = (0.05, 0.07, 0.10)
ELBO_WINDOW = 50

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Desk-scale corpus, generative prior and surrogates for sizes 256, 512 and 1024."""
    out = str(tmp_path_factory.mktemp("desk"))
    set_log_dir(os.path.join(out, "logs"))
    cfg = load_config(overrides={"out": out, "record_timing": "false", "surrogate_sizes": "256,512,1024"}, preset="desk")
    cmd_gen_data(cfg)
    cmd_train_dgp(cfg)
    cmd_train_surrogate(cfg, cfg["surrogate_sizes"])
    return cfg


def test_gradient_agreement_grows_with_corpus_size(desk_run):
    rows, passed = cmd_gradcheck(desk_run)
    cos_mu = [row[2] for row in rows if row[0] == "mu" and row[1] != "self"]
    assert len(cos_mu) == 3
    assert cos_mu == sorted(cos_mu)
    assert cos_mu[-1] >= 0.7
    assert passed


def test_surrogate_inference_tracks_the_adjoint(desk_run):
    rows = {method: cmd_infer(desk_run.replace(method=method)) for method in ("vi-nn", "vi-adjoint")}
    for row in rows.values():
        assert row["rel_l2_error"] < row["prior_mean_error"]
    nn, adjoint = rows["vi-nn"]["rel_l2_error"], rows["vi-adjoint"]["rel_l2_error"]
    assert abs(nn - adjoint) <= 0.25 * adjoint

    for method in rows:
        trace = read_csv(os.path.join(infer_dir(desk_run, method, desk_run["noise_level"]), "trace.csv"))
        smoothed = moving_average([float(row["elbo_estimate"]) for row in trace], ELBO_WINDOW)
        # smoothed[i] averages iterations i .. i + ELBO_WINDOW - 1
        assert smoothed[-1] > smoothed[100 - ELBO_WINDOW]


def _smooth_decoder(grid: Grid2D, latent_dim: int) -> np.ndarray:
    """Leading eigenvectors of a GRF covariance, scaled by the square roots of their eigenvalues."""
    values, vectors = np.linalg.eigh(covariance_matrix(grid, GRFSpec(sigma_k2=1.0, l1=0.3, l2=0.3)))
    return vectors[:, -latent_dim:] * np.sqrt(values[-latent_dim:])


def test_error_grows_with_noise_level():
    grid = Grid2D(8, 8)
    plan = uniform_observation_plan(6)
    basis = _smooth_decoder(grid, 3)
    decoder = LinearDecoder(basis)
    config = VIConfig(iterations=1500, samples=4, lr_mu=0.003, lr_logvar=0.01, optimizer="adam",
                      record_timing=False, log_every=0)

    errors = {level: [] for level in NOISE_LEVELS}
    for seed in range(5):
        truth = ScalarField(grid, basis @ np.random.default_rng([seed, 0]).standard_normal(3))
        clean = forward(truth, plan)
        for level in NOISE_LEVELS:
            # one noise stream per seed, so the levels share the standardized draws
            obs = add_noise(clean, level, np.random.default_rng([seed, 1]))
            params, _ = optimize(config, AdjointBackend(grid, plan, obs), decoder, np.random.default_rng([seed, 2]))
            errors[level].append(relative_l2_error(ScalarField(grid, basis @ params.mu), truth))

    medians = [float(np.median(errors[level])) for level in NOISE_LEVELS]
    assert medians == sorted(medians)
