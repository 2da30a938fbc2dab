"""
Cell-centered finite-volume solver for steady single-phase Darcy flow

    v = -exp(k) grad p,   div v = f   on (0,1)^2
    p = 1 on the left wall, p = 0 on the right wall, v.n = 0 on top/bottom,

together with the Gaussian data misfit and its discrete adjoint gradient
with respect to the log-permeability k.
"""

from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.utils.errors import AssemblyError, ConvergenceError, DomainError
from src.utils.evaluation_counter import increment_evaluation
from src.utils.grid_field import Grid2D, ObservationPlan, ObservationSet, ScalarField, observation_matrix

P_LEFT = 1.0
P_RIGHT = 0.0
SOLVER_TOLERANCE = 1e-10
CG_MAX_ITERATIONS = 10000

Source = Union[float, ScalarField]


@dataclass(frozen=True)
class Transmissibilities:
    """Face coefficients; tx is (ny, nx-1), ty is (ny-1, nx), t_left/t_right are (ny,)."""

    tx: np.ndarray
    ty: np.ndarray
    t_left: np.ndarray
    t_right: np.ndarray


@dataclass(frozen=True)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    trans: Transmissibilities

    @property
    def n(self) -> int:
        return self.rhs.size


@dataclass(frozen=True)
class DarcySolution:
    """Pressure and face velocities.

    vx holds (nx+1)*ny x-face velocities (face i fastest, x1 = i*hx),
    vy holds nx*(ny+1) y-face velocities (x2 = j*hy). Velocities are
    fluxes per unit face length.
    """

    p: ScalarField
    vx: np.ndarray
    vy: np.ndarray
    residual_norm: float

    def vx_array(self) -> np.ndarray:
        return self.vx.reshape(self.p.grid.ny, self.p.grid.nx + 1)

    def vy_array(self) -> np.ndarray:
        return self.vy.reshape(self.p.grid.ny + 1, self.p.grid.nx)


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def transmissibilities(k: ScalarField) -> Transmissibilities:
    if not np.all(np.isfinite(k.values)):
        raise AssemblyError("[ERROR] Log-permeability contains non-finite values")
    grid = k.grid
    cond = np.exp(k.as_array())
    if not np.all(np.isfinite(cond)) or np.any(cond <= 0):
        raise AssemblyError("[ERROR] exp(k) overflowed or underflowed during assembly")
    gx = grid.hy / grid.hx
    gy = grid.hx / grid.hy
    return Transmissibilities(
        tx=gx * _harmonic(cond[:, :-1], cond[:, 1:]),
        ty=gy * _harmonic(cond[:-1, :], cond[1:, :]),
        t_left=2.0 * gx * cond[:, 0],
        t_right=2.0 * gx * cond[:, -1],
    )


def _source_vector(grid: Grid2D, f_const: Source) -> np.ndarray:
    if isinstance(f_const, ScalarField):
        if f_const.grid != grid:
            raise DomainError("[ERROR] Source field grid does not match the permeability grid")
        return f_const.values * grid.hx * grid.hy
    return np.full(grid.size, float(f_const) * grid.hx * grid.hy)


def assemble(k: ScalarField, f_const: Source = 3.0) -> SparseSystem:
    """
    Assemble the 5-point finite-volume system A p = b.

    Interior faces use the harmonic mean of exp(k) times face-length / center distance;
    Dirichlet walls use the half-cell coefficient 2 exp(k_cell) hy/hx; top and bottom
    walls carry no flux.
    """
    grid = k.grid
    trans = transmissibilities(k)
    nx, ny = grid.nx, grid.ny
    idx = np.arange(grid.size).reshape(ny, nx)

    diag = np.zeros((ny, nx))
    diag[:, :-1] += trans.tx
    diag[:, 1:] += trans.tx
    diag[:-1, :] += trans.ty
    diag[1:, :] += trans.ty
    diag[:, 0] += trans.t_left
    diag[:, -1] += trans.t_right

    rows = [idx.ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel(), idx[:-1, :].ravel(), idx[1:, :].ravel()]
    cols = [idx.ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel(), idx[1:, :].ravel(), idx[:-1, :].ravel()]
    vals = [diag.ravel(), -trans.tx.ravel(), -trans.tx.ravel(), -trans.ty.ravel(), -trans.ty.ravel()]
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size)
    )

    rhs = _source_vector(grid, f_const).reshape(ny, nx).copy()
    rhs[:, 0] += trans.t_left * P_LEFT
    rhs[:, -1] += trans.t_right * P_RIGHT
    return SparseSystem(matrix=matrix, rhs=rhs.ravel(), trans=trans)


def _relative_residual(matrix: sp.csr_matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(rhs - matrix @ x) / (scale if scale > 0 else 1.0))


def _solve(matrix: sp.csr_matrix, rhs: np.ndarray, factor: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, float]:
    """Direct solve, refined by conjugate gradients if the residual misses the tolerance."""
    x = factor(rhs)
    residual = _relative_residual(matrix, x, rhs)
    if residual > SOLVER_TOLERANCE:
        x, _ = spla.cg(matrix, rhs, x0=x, rtol=SOLVER_TOLERANCE * 0.1, atol=0.0, maxiter=CG_MAX_ITERATIONS)
        residual = _relative_residual(matrix, x, rhs)
    if residual > SOLVER_TOLERANCE:
        raise ConvergenceError("Linear solve did not reach the requested tolerance", residual)
    return x, residual


def _face_velocities(grid: Grid2D, p: np.ndarray, trans: Transmissibilities) -> Tuple[np.ndarray, np.ndarray]:
    nx, ny = grid.nx, grid.ny
    vx = np.zeros((ny, nx + 1))
    vx[:, 1:-1] = -trans.tx * (p[:, 1:] - p[:, :-1]) / grid.hy
    vx[:, 0] = -trans.t_left * (p[:, 0] - P_LEFT) / grid.hy
    vx[:, -1] = -trans.t_right * (P_RIGHT - p[:, -1]) / grid.hy
    vy = np.zeros((ny + 1, nx))
    vy[1:-1, :] = -trans.ty * (p[1:, :] - p[:-1, :]) / grid.hx
    return vx, vy


def _solve_with_factor(k: ScalarField, f_const: Source) -> Tuple[DarcySolution, SparseSystem, Callable]:
    system = assemble(k, f_const)
    factor = spla.factorized(system.matrix.tocsc())
    p, residual = _solve(system.matrix, system.rhs, factor)
    grid = k.grid
    vx, vy = _face_velocities(grid, p.reshape(grid.ny, grid.nx), system.trans)
    increment_evaluation("forward")
    solution = DarcySolution(p=ScalarField(grid, p), vx=vx.ravel(), vy=vy.ravel(), residual_norm=residual)
    return solution, system, factor


def solve_pressure(k: ScalarField, f_const: Source = 3.0) -> DarcySolution:
    """
    Solve for pressure and reconstruct face velocities v = -T dp from the same coefficients.

    Raises:
        ConvergenceError: when the relative residual stays above 1e-10
    """
    solution, _, _ = _solve_with_factor(k, f_const)
    return solution


def boundary_outflow(solution: DarcySolution) -> float:
    """Net flux leaving through the two Dirichlet walls."""
    grid = solution.p.grid
    vx = solution.vx_array()
    return float(np.sum(vx[:, -1]) * grid.hy - np.sum(vx[:, 0]) * grid.hy)


def cell_velocities(solution: DarcySolution) -> Tuple[ScalarField, ScalarField]:
    """Face velocities averaged to cell centers."""
    grid = solution.p.grid
    vx = solution.vx_array()
    vy = solution.vy_array()
    return (
        ScalarField(grid, 0.5 * (vx[:, :-1] + vx[:, 1:])),
        ScalarField(grid, 0.5 * (vy[:-1, :] + vy[1:, :])),
    )


def forward(k: ScalarField, plan: ObservationPlan, f_const: Source = 3.0) -> np.ndarray:
    """F(k): pressure at the observation locations."""
    solution = solve_pressure(k, f_const)
    return observation_matrix(k.grid, plan) @ solution.p.values


def _weighted_residual(predicted: np.ndarray, obs: ObservationSet) -> np.ndarray:
    if predicted.shape != obs.noisy.shape:
        raise DomainError(
            f"[ERROR] Prediction has {predicted.size} entries, observations have {len(obs)}"
        )
    return (predicted - obs.noisy) / obs.sigma


def misfit_from_prediction(predicted: np.ndarray, obs: ObservationSet) -> float:
    r = _weighted_residual(predicted, obs)
    return 0.5 * float(r @ r)


def misfit(k: ScalarField, plan: ObservationPlan, obs: ObservationSet, f_const: Source = 3.0) -> float:
    """Phi(k) = 1/2 sum_j ((F(k)_j - d_j) / sigma_j)^2."""
    return misfit_from_prediction(forward(k, plan, f_const), obs)


def misfit_and_grad(
    k: ScalarField, plan: ObservationPlan, obs: ObservationSet, f_const: Source = 3.0
) -> Tuple[float, ScalarField]:
    """
    Misfit and its gradient with respect to every cell of k.

    One forward solve and one adjoint solve A lam = -O^T W r reusing the same
    factorization; g_c = lam^T (dA/dk_c p - db/dk_c).
    """
    grid = k.grid
    solution, system, factor = _solve_with_factor(k, f_const)
    obs_op = observation_matrix(grid, plan)
    p_flat = solution.p.values
    r = _weighted_residual(obs_op @ p_flat, obs)
    value = 0.5 * float(r @ r)

    adjoint_rhs = -(obs_op.T @ (r / obs.sigma))
    if not np.any(adjoint_rhs):
        return value, ScalarField(grid, np.zeros(grid.size))
    lam_flat, _ = _solve(system.matrix, adjoint_rhs, factor)
    increment_evaluation("gradient")

    lam = lam_flat.reshape(grid.ny, grid.nx)
    p = p_flat.reshape(grid.ny, grid.nx)
    cond = np.exp(k.as_array())
    gx = grid.hy / grid.hx
    gy = grid.hx / grid.hy
    grad = np.zeros((grid.ny, grid.nx))

    # d/dk_a of the harmonic mean 2 Ka Kb / (Ka + Kb) is 2 Kb^2 Ka / (Ka + Kb)^2
    ka, kb = cond[:, :-1], cond[:, 1:]
    term = (lam[:, :-1] - lam[:, 1:]) * (p[:, :-1] - p[:, 1:])
    denom = (ka + kb) ** 2
    grad[:, :-1] += gx * 2.0 * kb ** 2 * ka / denom * term
    grad[:, 1:] += gx * 2.0 * ka ** 2 * kb / denom * term

    ka, kb = cond[:-1, :], cond[1:, :]
    term = (lam[:-1, :] - lam[1:, :]) * (p[:-1, :] - p[1:, :])
    denom = (ka + kb) ** 2
    grad[:-1, :] += gy * 2.0 * kb ** 2 * ka / denom * term
    grad[1:, :] += gy * 2.0 * ka ** 2 * kb / denom * term

    # Wall coefficients are linear in exp(k_cell)
    grad[:, 0] += system.trans.t_left * lam[:, 0] * (p[:, 0] - P_LEFT)
    grad[:, -1] += system.trans.t_right * lam[:, -1] * (p[:, -1] - P_RIGHT)

    return value, ScalarField(grid, grad)


def adjoint_grad(k: ScalarField, plan: ObservationPlan, obs: ObservationSet, f_const: Source = 3.0) -> ScalarField:
    """Gradient dPhi/dk of the discrete system by the adjoint method."""
    _, grad = misfit_and_grad(k, plan, obs, f_const)
    return grad
