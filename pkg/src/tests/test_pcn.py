import numpy as np
import pytest

from src.actions.pcn.pcn import (
    CHAIN_COLUMNS, PCNConfig, batch_means_ess, batch_means_stderr, batch_means_variance, initial_state,
    pcn_step, pooled_samples, run_chain, run_chain_with, run_chains,
)
from src.shared.backends import FlatLikelihoodBackend, LinearBackend, LinearDecoder, conjugate_posterior
from src.utils.csv_io import read_csv
from src.utils.errors import DomainError
from src.utils.evaluation_counter import get_evaluation_count, reset_counters, set_run_context
from src.utils.grid_field import ObservationSet


def _flat(z: np.ndarray) -> float:
    return 0.0


def _conjugate_problem():
    observed = np.array([3.1875, -2.5])
    obs = ObservationSet(clean=observed, noisy=observed, sigma=np.full(2, 0.5), noise_level=0.0)
    return LinearBackend(np.diag([2.0, 1.0]), obs), LinearDecoder(np.eye(2)), obs


def test_config_validation():
    with pytest.raises(DomainError):
        PCNConfig(beta=1.5)
    with pytest.raises(DomainError):
        PCNConfig(iterations=10, burn_in=10)
    with pytest.raises(DomainError):
        PCNConfig(thin=0)


def test_step_with_zero_beta_always_accepts_the_same_point():
    state = initial_state(np.array([0.3, -1.2]), lambda z: -float(z @ z))
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = pcn_step(state, 0.0, lambda z: -float(z @ z), rng)
    np.testing.assert_array_equal(state.z, [0.3, -1.2])
    assert state.accepted == 50
    assert state.steps == 50


def test_step_rejects_a_forbidden_region():
    # every proposal with z[0] > 0 is impossible
    def loglik(z):
        return 0.0 if z[0] <= 0 else -np.inf

    state = initial_state(np.array([-0.5]), loglik)
    rng = np.random.default_rng(1)
    for _ in range(500):
        state = pcn_step(state, 0.5, loglik, rng)
        assert state.z[0] <= 0
    assert 0 < state.accepted < 500


def test_flat_likelihood_accepts_everything():
    config = PCNConfig(beta=0.3, iterations=200, burn_in=100, log_every=0)
    result = run_chain(config, FlatLikelihoodBackend(), LinearDecoder(np.eye(3)), np.random.default_rng(2))
    assert result.acceptance_rate == 1.0
    assert result.accepted.all()
    assert result.samples.shape == (100, 3)


def test_proposal_preserves_the_prior():
    config = PCNConfig(beta=0.15, iterations=100_000, burn_in=1000, log_every=0)
    result = run_chain_with(config, _flat, np.zeros(2), np.random.default_rng(3))
    variance = result.samples.var(axis=0)
    assert np.all((variance >= 0.95) & (variance <= 1.05))
    # about 600 effective draws per coordinate at this step size
    np.testing.assert_allclose(result.samples.mean(axis=0), 0.0, atol=0.15)


def test_thinning_and_chain_file(tmp_path):
    config = PCNConfig(beta=0.2, iterations=100, burn_in=40, thin=7, log_every=0)
    path = str(tmp_path / "chain.csv")
    result = run_chain_with(config, _flat, np.zeros(2), np.random.default_rng(4), chain_path=path)
    assert result.samples.shape == (9, 2)
    rows = read_csv(path)
    assert len(rows) == 100
    assert list(rows[0]) == CHAIN_COLUMNS


def test_chain_is_seed_deterministic():
    backend, decoder, _ = _conjugate_problem()
    config = PCNConfig(beta=0.2, iterations=300, burn_in=100, log_every=0)
    a = run_chain(config, backend, decoder, np.random.default_rng(5))
    b = run_chain(config, backend, decoder, np.random.default_rng(5))
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.loglik, b.loglik)


def test_one_forward_evaluation_per_step():
    backend, decoder, _ = _conjugate_problem()
    reset_counters("pcn-test")
    set_run_context("pcn-test")
    run_chain(PCNConfig(iterations=50, burn_in=10, log_every=0), backend, decoder, np.random.default_rng(6))
    assert get_evaluation_count("pcn-test", "forward") == 51


@pytest.mark.slow
def test_recovers_conjugate_posterior_mean():
    backend, decoder, obs = _conjugate_problem()
    mean, cov = conjugate_posterior(np.eye(2), np.diag([2.0, 1.0]), obs)
    config = PCNConfig(beta=0.25, iterations=100_000, burn_in=20_000, log_every=0)
    result = run_chain(config, backend, decoder, np.random.default_rng(7))
    np.testing.assert_allclose(result.samples.mean(axis=0), mean, rtol=0.03)
    np.testing.assert_allclose(result.samples.var(axis=0), np.diag(cov), rtol=0.15)
    assert 0.05 < result.acceptance_rate < 0.95


def test_batch_means_on_independent_draws():
    draws = np.random.default_rng(8).standard_normal((40000, 2))
    ess = batch_means_ess(draws)
    assert np.all((ess > 0.6 * 40000) & (ess < 1.5 * 40000))
    np.testing.assert_allclose(batch_means_stderr(draws), 1.0 / np.sqrt(40000), rtol=0.3)


def test_batch_means_on_correlated_draws():
    rng = np.random.default_rng(9)
    n, rho = 40000, 0.9
    x = np.zeros(n)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + np.sqrt(1 - rho ** 2) * rng.standard_normal()
    ess = batch_means_ess(x)[0]
    # integrated autocorrelation time (1 + rho) / (1 - rho) = 19
    assert n / 40 < ess < n / 10


def test_batch_means_edge_cases():
    assert batch_means_ess(np.ones((100, 2))).tolist() == [0.0, 0.0]
    with pytest.raises(DomainError):
        batch_means_variance(np.zeros(1))


def test_independent_chains_do_not_depend_on_workers():
    backend, decoder, _ = _conjugate_problem()
    config = PCNConfig(beta=0.2, iterations=200, burn_in=100, log_every=0)
    reset_counters("pcn-chains")
    set_run_context("pcn-chains")
    serial = run_chains(config, backend, decoder, master_seed=11, n_chains=3, workers=1)
    parallel = run_chains(config, backend, decoder, master_seed=11, n_chains=3, workers=3)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(serial[0].samples, serial[1].samples)
    assert get_evaluation_count("pcn-chains", "forward") == 2 * 3 * 201

    samples, rate = pooled_samples(serial)
    assert samples.shape == (300, 2)
    assert rate == pytest.approx(np.mean([r.acceptance_rate for r in serial]))
