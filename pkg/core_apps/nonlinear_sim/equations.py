from functools import lru_cache
from typing import Optional

import numpy as np

from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.errors import SolverError
from core_apps.nonlinear_sim.models import SimState
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import apply_along, gradient_matrix, sqrt_maxwellian

# species sign s, broadcast over (n_x, 2, n, n, n)
SIGNS = np.array([1.0, -1.0])[None, :, None, None, None]


@lru_cache(maxsize=16)
def force_matrix(n: int, h: float) -> np.ndarray:
    """mu^{-1/2} D_flux mu^{1/2} along v_1, with D_flux = -D^T.

    Columns of D_flux sum to zero, so the force term carries no mass and no charge.
    """
    nodes = (np.arange(n) + 0.5 - n / 2) * h
    flux = -gradient_matrix(n, h).T
    ratio = np.exp(0.25 * (nodes[:, None] ** 2 - nodes[None, :] ** 2))
    out = np.where(flux != 0.0, flux * ratio, 0.0)
    out.setflags(write=False)
    return out


def v1_force_derivative(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Discrete (d/dv_1 - v_1 / 2) f in conservative form."""
    return apply_along(force_matrix(grid.n_per_axis, grid.h), f, 0)


def nonlinear_source(
    state: SimState, operator: Optional[CollisionOperator] = None
) -> np.ndarray:
    """N_s = -s 2 E_1 (d/dv_1 - v_1 / 2) f_s + Gamma_s(f, f)."""
    velocity = state.grid.velocity
    operator = get_operator(velocity) if operator is None else operator
    E1 = state.E1[:, None, None, None, None]
    force = -2.0 * SIGNS * E1 * v1_force_derivative(state.f, velocity)
    return force + operator.gamma_nonlinear(state.f, state.f)


def linear_transport(state: SimState) -> np.ndarray:
    """-v_1 d/dx_1 f + 2 s E_1 v_1 sqrt(mu)."""
    velocity = state.grid.velocity
    v1 = velocity.mesh[0]
    E1 = state.E1[:, None, None, None, None]
    streaming = -v1 * state.grid.x_derivative(state.f)
    return streaming + 2.0 * SIGNS * E1 * v1 * sqrt_maxwellian(velocity)


def explicit_rhs(state: SimState, operator: Optional[CollisionOperator] = None) -> np.ndarray:
    """Every term of the perturbation equation except -L f."""
    return linear_transport(state) + nonlinear_source(state, operator)


def perturbation_rhs(
    state: SimState, operator: Optional[CollisionOperator] = None
) -> np.ndarray:
    """d/dt f = -v_1 d_x f + 2 s E_1 v_1 sqrt(mu) - L f + N(f)."""
    operator = get_operator(state.grid.velocity) if operator is None else operator
    out = explicit_rhs(state, operator) - operator.linearized_L(state.f)
    if not np.all(np.isfinite(out)):
        raise SolverError(f"Right-hand side is not finite at t={state.t:g}")
    return out
