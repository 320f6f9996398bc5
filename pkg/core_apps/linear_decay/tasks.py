from dataclasses import dataclass

import numpy as np
from loguru import logger

from core_apps.collision.operators import get_operator
from core_apps.linear_decay.lyapunov import equivalent_norm
from core_apps.linear_decay.mode import ModeGenerator, evolve_mode, velocity_profile
from core_apps.linear_decay.models import ModeState
from core_apps.velocity_space.models import VelocityGrid


@dataclass(frozen=True)
class ShellJob:
    k_norm: float
    n_per_axis: int
    v_max: float
    delta_reg: float
    horizon: float
    dt: float
    output_every: int = 1
    profile: str = "gaussian"
    ell: float = 0.0


def evolve_shell(job: ShellJob) -> tuple[np.ndarray, np.ndarray]:
    """Evolve the profile at k = |k| e_1 and return (times, |w_ell f|^2 + |k|^2 |phi|^2)."""
    grid = VelocityGrid(v_max=job.v_max, n_per_axis=job.n_per_axis)
    operator = get_operator(grid, job.delta_reg)
    k = np.array([job.k_norm, 0.0, 0.0])
    initial = ModeState(f_hat=velocity_profile(grid, job.profile), k=k, grid=grid)
    try:
        traj = evolve_mode(
            initial,
            job.horizon,
            job.dt,
            output_every=job.output_every,
            generator=ModeGenerator(grid, k, operator=operator),
        )
    except Exception as e:
        logger.error(f"Shell |k|={job.k_norm:.4g} failed: {str(e)}")
        raise
    energies = np.array([equivalent_norm(state, job.ell) for state in traj.states()])
    return traj.times, energies
