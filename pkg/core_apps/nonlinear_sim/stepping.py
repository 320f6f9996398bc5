from typing import Optional

import numpy as np
from loguru import logger
from scipy import linalg, sparse
from scipy.sparse import linalg as sparse_linalg

from config import settings
from core_apps.collision.cache import load_or_build
from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.errors import GridError, PositivityError, SolverError
from core_apps.field.utils import solve_poisson_slab
from core_apps.nonlinear_sim.energy import energy_functionals, ledger_entries
from core_apps.nonlinear_sim.equations import explicit_rhs
from core_apps.nonlinear_sim.models import (
    STEPPER_MODES,
    EnergyLedger,
    SimState,
    SimTrajectory,
    SlabGrid,
)
from core_apps.velocity_space.utils import maxwellian, sqrt_maxwellian

OFF_DIAGONAL = ((0, 1), (0, 2), (1, 2))


def projected_collision_matrix(
    operator: CollisionOperator, use_cache: bool = True
) -> np.ndarray:
    return load_or_build(
        "dense_projected_L",
        operator.grid,
        operator.delta_reg,
        operator.dense_projected_L,
        use_cache=use_cache,
    )


class ImexStepper:
    """Second-order IMEX step: trapezoidal rule in L, Heun for every other term.

    L enters through the per-site projected matrix, so the collision step moves no
    mass, momentum or energy.
    """

    def __init__(
        self,
        grid: SlabGrid,
        dt: float,
        operator: Optional[CollisionOperator] = None,
        matrix: Optional[np.ndarray] = None,
    ) -> None:
        self.grid = grid
        self.dt = dt
        self.operator = get_operator(grid.velocity) if operator is None else operator
        self.L = projected_collision_matrix(self.operator) if matrix is None else matrix
        self.size = 2 * grid.velocity.size
        if self.L.shape != (self.size, self.size):
            raise GridError(f"Collision matrix has shape {self.L.shape}, expected {self.size}")
        system = np.eye(self.size) + 0.5 * dt * self.L
        self.factor = linalg.lu_factor(system, check_finite=False)

    def _apply_L(self, f: np.ndarray) -> np.ndarray:
        return (f.reshape(self.grid.n_x, self.size) @ self.L.T).reshape(f.shape)

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        columns = rhs.reshape(self.grid.n_x, self.size).T
        out = linalg.lu_solve(self.factor, columns, check_finite=False)
        return out.T.reshape(rhs.shape)

    def step(self, state: SimState) -> SimState:
        dt = self.dt
        f = state.f
        half_collision = f - 0.5 * dt * self._apply_L(f)
        explicit = explicit_rhs(state, self.operator)
        predicted = state.with_values(self._solve(half_collision + dt * explicit), state.t + dt)
        explicit_next = explicit_rhs(predicted, self.operator)
        corrected = self._solve(half_collision + 0.5 * dt * (explicit + explicit_next))
        return state.with_values(corrected, state.t + dt)


def _frozen_field(F: np.ndarray, grid: SlabGrid) -> np.ndarray:
    charge = np.sum(F[:, 0] - F[:, 1], axis=(1, 2, 3)) * grid.velocity.weight
    return solve_poisson_slab(charge, grid.geometry)[1]


def _neighbors(shape: tuple[int, ...], shift: tuple[int, int, int, int]):
    """Flat indices of the neighbor at shift (site, v1, v2, v3): periodic in x, cut off in v."""
    index = np.indices(shape)
    target = [index[0] + shift[0]] + [index[a + 1] + shift[a + 1] for a in range(3)]
    n = shape[1]
    valid = np.ones(shape, dtype=bool)
    for axis in range(3):
        valid &= (target[axis + 1] >= 0) & (target[axis + 1] < n)
    columns = np.ravel_multi_index(
        tuple(target), shape, mode=("wrap", "clip", "clip", "clip")
    )
    return valid.ravel(), columns.ravel()


class _Assembler:
    """Collects COO triplets of an (N, N) matrix over the flattened (site, v) lattice."""

    def __init__(self, shape: tuple[int, ...]) -> None:
        self.shape = shape
        self.size = int(np.prod(shape))
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.diagonal = np.zeros(self.size)

    def add(self, shift: tuple[int, int, int, int], coefficient: np.ndarray) -> None:
        coefficient = np.broadcast_to(coefficient, self.shape).ravel()
        valid, columns = _neighbors(self.shape, shift)
        keep = valid & (coefficient != 0.0)
        self.rows.append(np.flatnonzero(keep))
        self.cols.append(columns[keep])
        self.vals.append(coefficient[keep])

    def build(self) -> sparse.csc_matrix:
        rows = np.concatenate(self.rows + [np.arange(self.size)])
        cols = np.concatenate(self.cols + [np.arange(self.size)])
        vals = np.concatenate(self.vals + [self.diagonal])
        return sparse.csc_matrix((vals, (rows, cols)), shape=(self.size, self.size))


def _unit(axis: int, step: int) -> tuple[int, int, int, int]:
    shift = [0, 0, 0, 0]
    shift[axis] = step
    return tuple(shift)


def diffusion_matrix(a: np.ndarray, h: float) -> sparse.csc_matrix:
    """Monotone discretization of a : D^2 for a symmetric (3, 3, n_x, n, n, n) tensor.

    Mixed derivatives use the sign-dependent diagonal stencil; the diagonal entries
    are raised to the row sum of |a_ij| so every off-center weight is nonnegative.
    """
    shape = a.shape[2:]
    mixed = {pair: np.abs(a[pair]) for pair in OFF_DIAGONAL}
    row_sum = [sum(mixed[tuple(sorted((i, j)))] for j in range(3) if j != i) for i in range(3)]
    effective = [np.maximum(np.maximum(a[i, i], row_sum[i]), 0.0) for i in range(3)]

    out = _Assembler(shape)
    out.diagonal = (
        -2.0 * sum(effective) + 2.0 * sum(mixed.values())
    ).ravel() / h**2
    for i in range(3):
        axial = (effective[i] - row_sum[i]) / h**2
        out.add(_unit(i + 1, 1), axial)
        out.add(_unit(i + 1, -1), axial)
    for (i, j), weight in mixed.items():
        positive = a[i, j] >= 0.0
        same = np.where(positive, weight, 0.0) / h**2
        cross = np.where(positive, 0.0, weight) / h**2
        for sign in (1, -1):
            shift = [0, 0, 0, 0]
            shift[i + 1], shift[j + 1] = sign, sign
            out.add(tuple(shift), same)
            shift[j + 1] = -sign
            out.add(tuple(shift), cross)
    return out.build()


def _upwind(out: _Assembler, axis: int, speed: np.ndarray, spacing: float) -> None:
    """Adds speed * d/d(axis) with the upwind one-sided difference."""
    out.diagonal += np.broadcast_to(np.abs(speed), out.shape).ravel() / spacing
    out.add(_unit(axis, -1), -np.maximum(speed, 0.0) / spacing)
    out.add(_unit(axis, 1), np.minimum(speed, 0.0) / spacing)


def iterate_step(
    F: np.ndarray,
    dt: float,
    grid: SlabGrid,
    operator: Optional[CollisionOperator] = None,
    t: float = 0.0,
) -> np.ndarray:
    """One linear implicit step for F_s = mu + sqrt(mu) f_s with coefficients frozen at F.

    Solves (F' - F) / dt + v_1 d_x F' + s 2 E_1 d_v1 F' = a : D^2 F' + S per species,
    where a = Phi * (F_+ + F_-) and S = Q(F_+ + F_-, F_s) - a : D^2 F_s. The negative
    part of S enters implicitly as -S^- F' / F, so the system is an M-matrix and
    F' >= 0 whenever F >= 0; mu is an exact fixed point.
    """
    velocity = grid.velocity
    operator = get_operator(velocity) if operator is None else operator
    F = np.asarray(F, dtype=float)
    if F.shape != grid.shape:
        raise GridError(f"Density shape {F.shape}, expected {grid.shape}")
    lowest = float(F.min())
    if lowest < -settings.TOL_POS:
        raise PositivityError(
            f"Iteration needs nonnegative input, min F = {lowest:.3e}", min_value=lowest, time=t
        )

    h = velocity.h
    site_shape = (grid.n_x,) + velocity.shape
    total = F[:, 0] + F[:, 1]
    a = operator.kernel.convolve_tensor(total)
    diffusion = diffusion_matrix(a, h)
    E1 = _frozen_field(F, grid)
    v1 = np.broadcast_to(velocity.mesh[0], site_shape)

    out = np.empty_like(F)
    for s, sign in enumerate((1.0, -1.0)):
        current = F[:, s]
        flat = current.ravel()
        collision = operator.collide(total, current).ravel()
        source = collision - diffusion @ flat
        gain = np.maximum(source, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            loss = np.where(flat > 0.0, -np.minimum(source, 0.0) / flat, 0.0)

        system = _Assembler(site_shape)
        system.diagonal = np.full(system.size, 1.0 / dt) + loss
        _upwind(system, 0, v1, grid.geometry.dx)
        force = np.broadcast_to(2.0 * sign * E1[:, None, None, None], site_shape)
        _upwind(system, 1, force, h)
        matrix = system.build() - diffusion
        solution = sparse_linalg.spsolve(matrix.tocsc(), flat / dt + gain)
        if not np.all(np.isfinite(solution)):
            raise SolverError(f"Implicit solve failed for species {'+-'[s]} at t={t:g}")
        out[:, s] = solution.reshape(site_shape)

    lowest = float(out.min())
    if lowest < -settings.TOL_POS:
        raise PositivityError(
            f"Iteration produced min F = {lowest:.3e}", min_value=lowest, time=t + dt
        )
    return out


class IterationStepper:
    def __init__(
        self, grid: SlabGrid, dt: float, operator: Optional[CollisionOperator] = None
    ) -> None:
        self.grid = grid
        self.dt = dt
        self.operator = get_operator(grid.velocity) if operator is None else operator
        self.mu = maxwellian(grid.velocity)
        self.root = sqrt_maxwellian(grid.velocity)

    def step(self, state: SimState) -> SimState:
        F = iterate_step(state.F, self.dt, self.grid, self.operator, state.t)
        return state.with_values((F - self.mu) / self.root, state.t + self.dt)


def _stepper(mode: str, grid: SlabGrid, dt: float, operator: CollisionOperator):
    if mode == "imex":
        return ImexStepper(grid, dt, operator)
    if mode == "iteration":
        return IterationStepper(grid, dt, operator)
    raise GridError(f"Unknown stepper mode {mode!r}; expected one of {STEPPER_MODES}")


def _check_positive(state: SimState) -> None:
    lowest = state.min_density()
    if lowest < -settings.TOL_POS:
        raise PositivityError(
            f"Density dropped to {lowest:.3e} at t={state.t:g}", min_value=lowest, time=state.t
        )


def simulate(
    initial: SimState,
    horizon: float,
    dt: float,
    mode: str = "imex",
    output_every: int = 1,
    operator: Optional[CollisionOperator] = None,
    with_ledger: bool = True,
    p_prime: Optional[float] = None,
    weights: Optional[dict] = None,
) -> SimTrajectory:
    if dt <= 0.0 or horizon <= 0.0:
        raise GridError(f"Need positive dt and horizon, got dt={dt}, T={horizon}")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * horizon:
        raise GridError(f"Horizon {horizon} is not a multiple of dt={dt}")
    if output_every < 1:
        raise GridError(f"output_every must be positive, got {output_every}")

    grid = initial.grid
    operator = get_operator(grid.velocity) if operator is None else operator
    smallness = energy_functionals(initial, 2, 2.0)["energy"]
    if smallness > settings.SMALLNESS_THRESHOLD:
        logger.warning(
            f"Initial E_2;2 = {smallness:.3e} exceeds the smallness threshold "
            f"{settings.SMALLNESS_THRESHOLD:.1e}; the run is outside the small-data regime"
        )
    stepper = _stepper(mode, grid, dt, operator)
    ledger = EnergyLedger()

    def sample(state: SimState) -> None:
        if with_ledger:
            ledger.record(state.t, ledger_entries(state, operator, p_prime, weights))

    logger.info(
        f"Simulating {steps} {mode} steps of dt={dt:g} on {grid.n_x} sites x "
        f"{grid.velocity.n_per_axis}^3 velocities"
    )
    state = initial
    _check_positive(state)
    times, samples = [state.t], [state.f]
    sample(state)
    for index in range(1, steps + 1):
        state = stepper.step(state)
        _check_positive(state)
        if index % output_every == 0 or index == steps:
            times.append(state.t)
            samples.append(state.f)
            sample(state)
            logger.debug(f"t={state.t:.4g}: Poisson residual {state.poisson_residual():.2e}")
    ledger.add_running_sup()
    return SimTrajectory(
        times=np.array(times),
        f=np.stack(samples),
        grid=grid,
        mode=mode,
        ledger=ledger,
    )
