from typing import Optional

import numpy as np
from loguru import logger
from scipy import stats

from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.errors import FitError, GridError
from core_apps.linear_decay.lyapunov import (
    MIN_SAMPLES,
    fit_bound,
    fit_dissipation,
    macro_dissipation,
)
from core_apps.linear_decay.models import InequalityFit, LyapunovConfig, ModeTrajectory
from core_apps.nonlinear_sim.equations import nonlinear_source
from core_apps.nonlinear_sim.models import InequalityReport, SimTrajectory
from core_apps.verification.fitting import fit_decay_exponent

# slack relative to the largest value of the differentiated series
RELATIVE_SLACK = 1e-10


def _centered(values: np.ndarray, dt: float) -> np.ndarray:
    return (values[2:] - values[:-2]) / (2.0 * dt)


def _step(traj: SimTrajectory) -> float:
    times = np.asarray(traj.times)
    if times.size < MIN_SAMPLES:
        raise GridError(f"Need at least {MIN_SAMPLES} samples, got {times.size}")
    steps = np.diff(times)
    if np.ptp(steps) > 1e-9 * steps.mean():
        raise GridError("Inequality fits need uniformly spaced samples")
    return float(steps.mean())


def _with_dissipation(
    name: str,
    rate: np.ndarray,
    rhs: np.ndarray,
    dissipation: np.ndarray,
    k_norm: float,
    slack: float,
) -> dict[str, InequalityFit]:
    """Fit C with lambda = 0, then the largest lambda with the right side doubled."""
    bound = fit_bound(f"{name}.constant", rate, rhs, k_norm, slack)
    constant = bound.constant if np.isfinite(bound.constant) else 0.0
    lam = fit_dissipation(
        f"{name}.lambda", rate - 2.0 * constant * rhs, dissipation, k_norm, slack
    )
    return {bound.name: bound, lam.name: lam}


def _slack(values: np.ndarray, dt: float) -> float:
    return RELATIVE_SLACK * max(float(np.max(np.abs(values))), 1e-300) / dt


def _mode_trajectory(traj: SimTrajectory, sources: np.ndarray, index: int = 1) -> ModeTrajectory:
    spectrum = np.fft.fft(traj.f, axis=1)[:, index]
    source_spectrum = np.fft.fft(sources, axis=1)[:, index]
    k = traj.grid.wavenumbers[index]
    return ModeTrajectory(
        times=traj.times,
        f_hat=spectrum,
        k=np.array([k, 0.0, 0.0]),
        grid=traj.grid.velocity,
        g_hat=source_spectrum,
    )


def decay_fits(traj: SimTrajectory) -> tuple[dict, tuple]:
    """Algebraic and exponential fits of zeta and of the field sup norms."""
    ledger = traj.ledger
    times = np.asarray(ledger.times)
    out, flags = {}, []
    for name, series in (
        ("zeta", ledger.series("zeta")),
        ("field_sup", ledger.series("phi_t_sup") + ledger.series("grad_phi_sup")),
    ):
        positive = series > 0.0
        if positive.sum() < MIN_SAMPLES:
            continue
        t, values = times[positive], series[positive]
        try:
            algebraic = fit_decay_exponent(t, values)
        except FitError as e:
            logger.warning(f"No algebraic fit for {name}: {str(e)}")
            continue
        exponential = stats.linregress(t, np.log(values))
        power = stats.linregress(np.log1p(t), np.log(values))
        out[name] = {
            "algebraic_slope": algebraic.slope,
            "algebraic_r2": float(power.rvalue**2),
            "exponential_rate": float(-exponential.slope),
            "exponential_r2": float(exponential.rvalue**2),
        }
        if name == "zeta" and exponential.rvalue**2 > power.rvalue**2:
            flags.append("slab_decay_exponential")
    return out, tuple(flags)


def energy_inequality_residuals(
    traj: SimTrajectory,
    operator: Optional[CollisionOperator] = None,
    cfg: Optional[LyapunovConfig] = None,
) -> InequalityReport:
    """Smallest constants that make each energy inequality hold at 99% of the samples."""
    dt = _step(traj)
    ledger = traj.ledger
    if len(ledger) != len(traj):
        raise GridError("Trajectory was produced without a ledger")
    operator = get_operator(traj.grid.velocity) if operator is None else operator
    k_norm = float(traj.grid.wavenumbers[1])
    series = {name: ledger.series(name) for name in ledger.names}
    inner = slice(1, -1)
    fits: dict[str, InequalityFit] = {}

    sup = series["phi_t_sup"] + series["grad_phi_sup"]
    zeta, zeta_h = series["zeta"], series["zeta_h"]
    dissipation = series["dissipation_3_3"][inner]
    fits.update(
        _with_dissipation(
            "zeta_decay",
            _centered(zeta, dt),
            (sup * zeta)[inner],
            dissipation,
            k_norm,
            _slack(zeta, dt),
        )
    )
    fits.update(
        _with_dissipation(
            "zeta_h_decay",
            _centered(zeta_h, dt),
            (sup * zeta_h + series["grad_macro"])[inner],
            dissipation,
            k_norm,
            _slack(zeta_h, dt),
        )
    )

    base_rate = _centered(series["base"], dt) + series["collision_pairing"][inner]
    base_rhs = np.sqrt(series["energy_2_2"]) * (
        series["micro_sigma"] + series["field"] + series["grad_macro"]
    )
    fits["base_energy"] = fit_bound(
        "base_energy", base_rate, base_rhs[inner], k_norm, _slack(series["base"], dt)
    )

    field_rhs = series["micro_sigma"] + series["grad_f_sigma"] + series["source_current"]
    fits.update(
        _with_dissipation(
            "field_dissipation",
            _centered(series["current_field"], dt),
            field_rhs[inner],
            series["field"][inner],
            k_norm,
            _slack(series["current_field"], dt),
        )
    )

    fits["source_moments"] = fit_bound(
        "source_moments",
        series["source_moments"],
        series["energy_2_2"] * (series["grad_f_sigma"] + series["grad2_f_sigma"]),
        k_norm,
    )
    fits["source_size"] = fit_bound(
        "source_size", series["source_size"], series["energy_3_3"], k_norm
    )

    sources = np.stack([nonlinear_source(state, operator) for state in traj.states()])
    mode = _mode_trajectory(traj, sources)
    fits["slab_macro_dissipation"] = macro_dissipation(mode, cfg)

    decay, flags = decay_fits(traj)
    if "slab_decay_exponential" in flags:
        logger.info("zeta decays exponentially on the slab, as expected for a periodic domain")
    report = InequalityReport(fits=fits, decay=decay, flags=flags)
    for name, pattern in report.sign_pattern.items():
        logger.debug(f"{name}: C={fits[name].constant:.4g} ({pattern})")
    return report
