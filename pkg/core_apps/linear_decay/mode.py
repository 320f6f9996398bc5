from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from loguru import logger
from scipy import linalg

from core_apps.collision.cache import load_or_build
from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.errors import GridError, SolverError
from core_apps.linear_decay.models import ModeState, ModeTrajectory
from core_apps.macro_micro.utils import check_microscopic
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import sqrt_maxwellian

SCHEMES = ("implicit", "split")
Source = Union[None, np.ndarray, Callable[[float], np.ndarray]]
Q1 = np.array([1.0, -1.0])[:, None, None, None]


def _k_dot_v(k: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    return np.tensordot(np.asarray(k, dtype=float), grid.mesh, axes=1)


def field_coupling(state: ModeState) -> np.ndarray:
    """2 i phi_hat (k . v) sqrt(mu) q_1."""
    grid = state.grid
    return 2j * state.phi_hat * _k_dot_v(state.k, grid) * sqrt_maxwellian(grid) * Q1


def mode_rhs(
    state: ModeState,
    g_hat: Optional[np.ndarray] = None,
    operator: Optional[CollisionOperator] = None,
) -> np.ndarray:
    """d/dt f_hat = -i (v . k) f_hat - 2 i phi_hat (k . v) sqrt(mu) q_1 - L f_hat + g_hat."""
    operator = get_operator(state.grid) if operator is None else operator
    out = (
        -1j * _k_dot_v(state.k, state.grid) * state.f_hat
        - field_coupling(state)
        - operator.linearized_L(state.f_hat)
    )
    if g_hat is not None:
        check_microscopic(g_hat, state.grid)
        out = out + g_hat
    return out


def dense_collision_matrix(
    operator: CollisionOperator, use_cache: bool = True
) -> np.ndarray:
    return load_or_build(
        "dense_L", operator.grid, operator.delta_reg, operator.dense_L, use_cache=use_cache
    )


class ModeGenerator:
    """Dense M_k = i (v . k) + F_k + L on flattened pairs, with d/dt f = -M_k f + g.

    F_k is the rank-one field coupling f -> 2 i phi_hat(f) (k . v) sqrt(mu) q_1.
    """

    def __init__(
        self,
        grid: VelocityGrid,
        k,
        operator: Optional[CollisionOperator] = None,
        dense_L: Optional[np.ndarray] = None,
    ) -> None:
        self.grid = grid
        self.k = np.asarray(k, dtype=float)
        self.operator = get_operator(grid) if operator is None else operator
        self.L = dense_collision_matrix(self.operator) if dense_L is None else dense_L
        self.size = 2 * grid.size
        if self.L.shape != (self.size, self.size):
            raise GridError(f"Dense L has shape {self.L.shape}, expected {self.size}")

        k_dot_v = _k_dot_v(self.k, grid)
        self.transport = np.concatenate([k_dot_v.ravel(), k_dot_v.ravel()])
        k_squared = float(self.k @ self.k)
        root = sqrt_maxwellian(grid)
        self.coupling_column = (2j * k_dot_v * root * Q1).ravel()
        if k_squared > 0.0:
            self.coupling_row = (root * Q1).ravel() * grid.weight / k_squared
        else:
            self.coupling_row = np.zeros(self.size)

    @cached_property
    def matrix(self) -> np.ndarray:
        out = self.L.astype(complex)
        out[np.diag_indices(self.size)] += 1j * self.transport
        out += np.outer(self.coupling_column, self.coupling_row)
        return out

    def apply(self, f: np.ndarray) -> np.ndarray:
        flat = f.reshape(self.size)
        out = self.L @ flat + 1j * self.transport * flat
        out = out + self.coupling_column * (self.coupling_row @ flat)
        return out.reshape(f.shape)

    def field_term(self, f: np.ndarray) -> np.ndarray:
        flat = f.reshape(self.size)
        return (self.coupling_column * (self.coupling_row @ flat)).reshape(f.shape)


def _source_at(g_hat: Source, t: float, grid: VelocityGrid) -> Optional[np.ndarray]:
    if g_hat is None:
        return None
    values = g_hat(t) if callable(g_hat) else g_hat
    check_microscopic(values, grid)
    return np.asarray(values, dtype=complex)


class ImplicitStepper:
    """Backward Euler on the full generator: (I + dt M_k) f_new = f + dt g(t_new)."""

    def __init__(self, generator: ModeGenerator, dt: float) -> None:
        self.generator = generator
        self.dt = dt
        system = np.eye(generator.size, dtype=complex) + dt * generator.matrix
        self.factor = linalg.lu_factor(system, check_finite=False)

    def step(self, f: np.ndarray, g: Optional[np.ndarray]) -> np.ndarray:
        rhs = f.reshape(-1) if g is None else (f + self.dt * g).reshape(-1)
        return linalg.lu_solve(self.factor, rhs, check_finite=False).reshape(f.shape)


class SplitStepper:
    """Exact transport substep, then backward Euler in L with the field term explicit."""

    def __init__(self, generator: ModeGenerator, dt: float) -> None:
        self.generator = generator
        self.dt = dt
        self.phase = np.exp(-1j * dt * generator.transport)
        system = np.eye(generator.size) + dt * generator.L
        self.factor = linalg.lu_factor(system, check_finite=False)

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        real = linalg.lu_solve(self.factor, rhs.real, check_finite=False)
        imag = linalg.lu_solve(self.factor, rhs.imag, check_finite=False)
        return real + 1j * imag

    def step(self, f: np.ndarray, g: Optional[np.ndarray]) -> np.ndarray:
        moved = self.phase * f.reshape(-1)
        rhs = moved - self.dt * self.generator.field_term(moved)
        if g is not None:
            rhs = rhs + self.dt * g.reshape(-1)
        return self._solve(rhs).reshape(f.shape)


def evolve_mode(
    initial: ModeState,
    horizon: float,
    dt: float,
    scheme: str = "implicit",
    g_hat: Source = None,
    output_every: int = 1,
    generator: Optional[ModeGenerator] = None,
) -> ModeTrajectory:
    """Integrate one mode to the horizon and store every output_every-th step."""
    if not dt > 0.0 or not horizon > 0.0:
        raise GridError(f"dt and horizon must be positive, got dt={dt}, horizon={horizon}")
    if scheme not in SCHEMES:
        raise GridError(f"Unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if output_every < 1:
        raise GridError(f"output_every must be at least 1, got {output_every}")

    grid = initial.grid
    generator = ModeGenerator(grid, initial.k) if generator is None else generator
    stepper = (ImplicitStepper if scheme == "implicit" else SplitStepper)(generator, dt)
    steps = int(round(horizon / dt))

    f = initial.f_hat.copy()
    times, states, sources = [0.0], [f.copy()], []
    g0 = _source_at(g_hat, 0.0, grid)
    sources.append(np.zeros_like(f) if g0 is None else g0)
    for n in range(1, steps + 1):
        t = n * dt
        g = _source_at(g_hat, t, grid)
        f = stepper.step(f, g)
        if not np.all(np.isfinite(f)):
            raise SolverError(f"Mode |k|={initial.k_norm:.3g} became non-finite at t={t:.4g}")
        if n % output_every == 0:
            times.append(t)
            states.append(f.copy())
            sources.append(np.zeros_like(f) if g is None else g)

    logger.debug(
        f"Evolved mode |k|={initial.k_norm:.3g} over {steps} {scheme} steps of {dt:g}"
    )
    return ModeTrajectory(
        times=np.array(times),
        f_hat=np.stack(states),
        k=initial.k,
        grid=grid,
        g_hat=None if g_hat is None else np.stack(sources),
        scheme=scheme,
    )


PROFILES = ("gaussian", "algebraic")


def velocity_profile(grid: VelocityGrid, name: str = "gaussian") -> np.ndarray:
    """Neutral initial velocity profile of every shell.

    gaussian: sqrt(mu) [1, 1] + v_1 sqrt(mu) [1, -1] / 2
    algebraic: <v>^{-2} [1, 1], the slowly decaying tail used for weighted-data comparisons
    """
    root = sqrt_maxwellian(grid)
    ones = np.ones((2, 1, 1, 1))
    if name == "gaussian":
        return root * ones + 0.5 * grid.mesh[0] * root * Q1
    if name == "algebraic":
        return grid.bracket**-2.0 * ones
    raise GridError(f"Unknown velocity profile {name!r}; expected one of {PROFILES}")
