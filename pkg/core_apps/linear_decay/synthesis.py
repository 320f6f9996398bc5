from typing import Callable, Optional

import numpy as np
from loguru import logger
from scipy import integrate

from config import settings
from core_apps.collision.operators import get_operator
from core_apps.common.errors import ConfigError, GridError
from core_apps.common.tasks import ordered_map
from core_apps.linear_decay.mode import dense_collision_matrix
from core_apps.linear_decay.models import DecayReport, ShellSpec, ShellSweep
from core_apps.linear_decay.tasks import ShellJob, evolve_shell
from core_apps.velocity_space.models import VelocityGrid
from core_apps.verification.fitting import fit_decay_exponent

DATA_FAMILIES = ("gaussian", "l2_critical", "zr_critical")
L2_CRITICAL_DELTA = 0.05
# Share of the final value carried by the two innermost shells above which the
# sweep is flagged as under-resolved near k = 0.
INNER_SHELL_LIMIT = 0.25


def _check_r(r: float) -> float:
    if not 1.0 <= r <= 2.0:
        raise ConfigError(f"r must lie in [1, 2], got {r}")
    return float(r)


def rate_exponent(r: float, m: float) -> float:
    """Decay exponent of the norm for Z_r data and m spatial derivatives."""
    r = _check_r(r)
    return 1.5 * (1.0 / r - 0.5) + 0.5 * m


def squared_target(r: float, m: float) -> float:
    return -2.0 * rate_exponent(r, m)


def default_family(r: float) -> str:
    if r == 1:
        return "gaussian"
    return "l2_critical" if r == 2 else "zr_critical"


def critical_power(r: float) -> float:
    """Power of |k| at the origin that just keeps the data in Z_r."""
    return -3.0 * (1.0 - 1.0 / _check_r(r)) + L2_CRITICAL_DELTA


def data_amplitude(family: str, r: float) -> Callable[[np.ndarray], np.ndarray]:
    """Radial frequency profile A(|k|) of the initial data.

    gaussian data lies in every Z_r. zr_critical is in Z_r and in no Z_q with
    q < r; l2_critical is its r = 2 case.
    """
    power = critical_power(r)
    if family == "gaussian":
        return lambda k: np.exp(-0.5 * k**2)
    if family == "l2_critical":
        if r != 2:
            raise ConfigError("l2_critical data is only admissible with r = 2")
        return lambda k: k**power * np.exp(-0.5 * k**2)
    if family == "zr_critical":
        return lambda k: k**power * np.exp(-0.5 * k**2)
    raise ConfigError(f"Unknown data family {family!r}; expected one of {DATA_FAMILIES}")


def sub_shell_tail(
    amplitude: Callable[[np.ndarray], np.ndarray],
    m: float,
    k_edge: float,
    k_inner: float,
    inner_energies: np.ndarray,
) -> np.ndarray:
    """Quadrature over [0, k_edge] below the innermost shell.

    Modes there are extrapolated from the innermost shell as
    E(t, k) = E(0, k_inner) (E(t, k_inner) / E(0, k_inner))^{(k / k_inner)^2}.
    """
    start = inner_energies[0]
    if start <= 0.0:
        return np.zeros_like(inner_energies)
    tail = np.zeros(len(inner_energies))
    for index, energy in enumerate(inner_energies):
        if energy <= 0.0:
            continue
        exponent = np.log(energy / start) / k_inner**2
        value, _ = integrate.quad(
            lambda k: 4.0
            * np.pi
            * k ** (2.0 + 2.0 * m)
            * amplitude(np.asarray(k)) ** 2
            * np.exp(exponent * k * k),
            0.0,
            k_edge,
            limit=200,
        )
        tail[index] = start * value
    return tail


def run_shell_sweep(
    shells: Optional[ShellSpec] = None,
    grid: Optional[VelocityGrid] = None,
    horizon: Optional[float] = None,
    dt: Optional[float] = None,
    profile: str = "gaussian",
    ell: float = 0.0,
    output_every: Optional[int] = None,
    workers: Optional[int] = None,
    delta_reg: Optional[float] = None,
) -> ShellSweep:
    """Evolve one mode per shell radius and collect the per-shell energies."""
    shells = ShellSpec.from_settings() if shells is None else shells
    grid = (
        VelocityGrid(v_max=settings.LINEAR_V_MAX, n_per_axis=settings.LINEAR_N_PER_AXIS)
        if grid is None
        else grid
    )
    horizon = settings.FIT_WINDOW[1] if horizon is None else horizon
    dt = settings.LINEAR_DT if dt is None else dt
    output_every = settings.SHELL_OUTPUT_EVERY if output_every is None else output_every
    workers = settings.WORKERS if workers is None else workers
    operator = get_operator(grid, delta_reg)

    # workers load the dense operator from the on-disk cache
    dense_collision_matrix(operator)

    jobs = [
        ShellJob(
            k_norm=float(k),
            n_per_axis=grid.n_per_axis,
            v_max=grid.v_max,
            delta_reg=operator.delta_reg,
            horizon=horizon,
            dt=dt,
            output_every=output_every,
            profile=profile,
            ell=ell,
        )
        for k in shells.radii
    ]
    logger.info(
        f"Sweeping {len(jobs)} shells in [{shells.k_min:g}, {shells.k_max:g}] "
        f"to t={horizon:g} with {workers} worker(s)"
    )
    results = ordered_map(evolve_shell, jobs, workers)
    return ShellSweep(
        radii=shells.radii,
        widths=shells.widths,
        times=results[0][0],
        energies=np.stack([energies for _, energies in results]),
        profile=profile,
        ell=ell,
    )


def synthesize_from_sweep(
    sweep: ShellSweep,
    m: float = 0.0,
    r: float = 1,
    family: Optional[str] = None,
    window: Optional[tuple[float, float]] = None,
) -> DecayReport:
    """Radial quadrature of |k|^{2m} A(|k|)^2 E(t, k) over the shells, with a log-log fit."""
    if m < 0:
        raise GridError(f"Derivative order must be nonnegative, got {m}")
    family = default_family(r) if family is None else family
    amplitude = data_amplitude(family, r)
    window = settings.FIT_WINDOW if window is None else window

    k = sweep.radii
    shell_weights = 4.0 * np.pi * k**2 * sweep.widths * k ** (2.0 * m) * amplitude(k) ** 2
    contributions = shell_weights[:, None] * sweep.energies
    # Modes below the innermost shell are diffusive; extrapolate them.
    width = float(sweep.widths[0])
    lower_edge = 0.5 * (np.sqrt(width**2 + 4.0 * k[0] ** 2) - width)
    tail = sub_shell_tail(amplitude, m, float(lower_edge), float(k[0]), sweep.energies[0])
    values = contributions.sum(axis=0) + tail

    mask = sweep.times > 0.0
    times, values, tail = sweep.times[mask], values[mask], tail[mask]
    contributions = contributions[:, mask]
    fit = fit_decay_exponent(times, values, window)

    flags = []
    last = int(np.searchsorted(times, window[1], side="right")) - 1
    inner_share = float(contributions[:2, last].sum() / values[last])
    if inner_share > INNER_SHELL_LIMIT:
        flags.append("inner_shells_unresolved")
        logger.warning(
            f"Two innermost shells carry {inner_share:.1%} of the value at t={times[last]:g}; "
            "refine the shell grid near k = 0"
        )

    target = squared_target(r, m)
    logger.info(
        f"m={m:g}, r={r}, {family}: fitted slope {fit.slope:.4f} +/- {fit.stderr:.1e} "
        f"(target {target:g})"
    )
    return DecayReport(
        times=times,
        values=values,
        exponents={
            "slope": fit.slope,
            "stderr": fit.stderr,
            "target": target,
            "sigma": rate_exponent(r, m),
            "m": m,
            "r": r,
            "family": family,
            "inner_share": inner_share,
            "tail_share": float(tail[last] / values[last]),
        },
        shells=sweep.radii,
        contributions=contributions,
        flags=tuple(flags),
    )


def synthesize_whole_space_decay(
    family: Optional[str] = None,
    m: float = 0.0,
    r: float = 1,
    shells: Optional[ShellSpec] = None,
    **sweep_options,
) -> DecayReport:
    sweep = run_shell_sweep(shells, **sweep_options)
    return synthesize_from_sweep(sweep, m=m, r=r, family=family)


def surcharge_comparison(
    weighted: ShellSweep, unweighted: ShellSweep, m: float = 0.0, r: float = 1
) -> dict[str, float]:
    """Fitted slopes for fast-tail and slow-tail velocity data, recorded side by side."""
    fast = synthesize_from_sweep(weighted, m=m, r=r)
    slow = synthesize_from_sweep(unweighted, m=m, r=r)
    return {
        "target": squared_target(r, m),
        f"slope_{weighted.profile}": fast.exponents["slope"],
        f"slope_{unweighted.profile}": slow.exponents["slope"],
        "difference": fast.exponents["slope"] - slow.exponents["slope"],
    }
