import numpy as np
import pytest

from src.methods.diff_engine import compare_gradients
from src.physics.darcy import (
    adjoint_grad, assemble, boundary_outflow, cell_velocities, forward, misfit, misfit_and_grad, solve_pressure,
)
from src.utils.errors import AssemblyError, DomainError
from src.utils.evaluation_counter import clear_run_context, get_evaluation_count, reset_counters, set_run_context
from src.utils.grid_field import Grid2D, ObservationPlan, ScalarField, add_noise, uniform_observation_plan


def _smooth_field(grid: Grid2D, amplitude: float = 0.5) -> ScalarField:
    centers = grid.cell_centers()
    return ScalarField(grid, amplitude * np.sin(2 * np.pi * centers[:, 0]) * np.cos(np.pi * centers[:, 1]))


def _random_field(grid: Grid2D, rng: np.random.Generator) -> ScalarField:
    return ScalarField(grid, 0.5 * rng.standard_normal(grid.size))


def test_matrix_is_symmetric_positive_definite():
    grid = Grid2D(5, 4)
    system = assemble(_random_field(grid, np.random.default_rng(0)))
    dense = system.matrix.toarray()
    np.testing.assert_allclose(dense, dense.T)
    assert np.all(np.linalg.eigvalsh(dense) > 0)


def test_linear_pressure_without_source():
    grid = Grid2D(8, 6)
    solution = solve_pressure(ScalarField(grid, np.zeros(grid.size)), f_const=0.0)
    x1 = grid.cell_centers()[:, 0]
    np.testing.assert_allclose(solution.p.values, 1.0 - x1, atol=1e-10)
    vx, vy = cell_velocities(solution)
    np.testing.assert_allclose(vx.values, 1.0, atol=1e-9)
    np.testing.assert_allclose(vy.values, 0.0, atol=1e-12)


def test_residual_within_tolerance():
    solution = solve_pressure(_random_field(Grid2D(10, 10), np.random.default_rng(1)))
    assert solution.residual_norm <= 1e-10


def test_mass_balance():
    grid = Grid2D(12, 9)
    solution = solve_pressure(_random_field(grid, np.random.default_rng(2)), f_const=3.0)
    # net outflow through the Dirichlet walls equals the integrated source
    assert boundary_outflow(solution) == pytest.approx(3.0, rel=1e-8)
    np.testing.assert_allclose(solution.vy_array()[0], 0.0)
    np.testing.assert_allclose(solution.vy_array()[-1], 0.0)


def test_higher_permeability_lowers_interior_pressure_with_source():
    grid = Grid2D(8, 8)
    low = solve_pressure(ScalarField(grid, np.zeros(grid.size)), 3.0)
    high = solve_pressure(ScalarField(grid, np.ones(grid.size)), 3.0)
    assert np.max(high.p.values) < np.max(low.p.values)


def test_overflowing_permeability_is_rejected():
    grid = Grid2D(3, 3)
    with pytest.raises(AssemblyError):
        assemble(ScalarField(grid, np.full(9, 800.0)))


def test_forward_and_misfit_consistency():
    grid = Grid2D(8, 8)
    plan = uniform_observation_plan(4)
    k = _smooth_field(grid)
    clean = forward(k, plan)
    assert clean.shape == (16,)
    obs = add_noise(clean, 0.0, np.random.default_rng(0))
    assert misfit(k, plan, obs) == pytest.approx(0.0, abs=1e-12)

    value, grad = misfit_and_grad(k, plan, obs)
    assert value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(grad.values, 0.0, atol=1e-8)


def test_misfit_rejects_wrong_observation_count():
    grid = Grid2D(4, 4)
    plan = uniform_observation_plan(2)
    obs = add_noise(np.ones(3), 0.05, np.random.default_rng(0))
    with pytest.raises(DomainError):
        misfit(ScalarField(grid, np.zeros(16)), plan, obs)


def _central_difference(k: ScalarField, plan: ObservationPlan, obs, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros(k.grid.size)
    for c in range(k.grid.size):
        plus = k.values.copy()
        plus[c] += h
        minus = k.values.copy()
        minus[c] -= h
        grad[c] = (misfit(ScalarField(k.grid, plus), plan, obs) - misfit(ScalarField(k.grid, minus), plan, obs)) / (2 * h)
    return grad


def test_adjoint_matches_finite_differences():
    rng = np.random.default_rng(42)
    for trial in range(20):
        nx, ny = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        grid = Grid2D(nx, ny)
        plan = uniform_observation_plan(int(rng.integers(2, 4)))
        truth = _random_field(grid, rng)
        obs = add_noise(forward(truth, plan), 0.05, rng)
        k = _random_field(grid, rng)

        analytic = adjoint_grad(k, plan, obs).values
        numeric = _central_difference(k, plan, obs)
        report = compare_gradients(analytic, numeric, tol=1e-6)
        assert report.passed, f"trial {trial}: max rel err {report.max_rel_err:.2e} at {report.worst_index}"


def test_evaluation_counting():
    grid = Grid2D(4, 4)
    plan = uniform_observation_plan(2)
    k = ScalarField(grid, np.zeros(16))
    obs = add_noise(forward(k, plan), 0.05, np.random.default_rng(5))

    reset_counters("darcy-test")
    set_run_context("darcy-test")
    try:
        forward(k, plan)
        misfit_and_grad(k, plan, obs)
    finally:
        clear_run_context()
    assert get_evaluation_count("darcy-test", "forward") == 2
    assert get_evaluation_count("darcy-test", "gradient") == 1


def test_pressure_invariant_to_uniform_shift_without_source():
    grid = Grid2D(9, 7)
    k = _random_field(grid, np.random.default_rng(13))
    shifted = ScalarField(grid, k.values + 1.3)
    np.testing.assert_allclose(solve_pressure(shifted, f_const=0.0).p.values, solve_pressure(k, f_const=0.0).p.values, atol=1e-10)
