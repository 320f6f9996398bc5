from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from scipy import optimize

from config import settings
from core_apps.common.errors import GridError, LyapunovConfigError
from core_apps.linear_decay.models import (
    InequalityFit,
    LyapunovConfig,
    ModeState,
    ModeTrajectory,
)
from core_apps.macro_micro.utils import (
    difference_current,
    get_projector,
    high_moments,
)
from core_apps.velocity_space.models import VelocityGrid, WeightSpec
from core_apps.velocity_space.utils import random_smooth_field, sigma_norm_squared

REQUIRED_FRACTION = 0.99
MIN_SAMPLES = 10
PROBE_FREQUENCIES = (0.1, 1.0, 3.0)


def _pairing(x: np.ndarray, y: np.ndarray) -> complex:
    """(x | y) = sum x conj(y)."""
    return complex(np.sum(x * np.conj(y)))


def _norm_squared(values: np.ndarray, grid: VelocityGrid, ell: float = 0.0) -> float:
    weight = WeightSpec(ell=ell).values(grid) if ell else 1.0
    return float(np.sum(np.abs(weight * values) ** 2) * grid.weight)


@dataclass(frozen=True, eq=False)
class ModeMoments:
    """Macro coefficients and micro-part moments of one mode state."""

    a: np.ndarray
    b: np.ndarray
    c: complex
    micro: np.ndarray
    Theta: np.ndarray
    Lambda: np.ndarray
    j: np.ndarray

    @classmethod
    def of(cls, state: ModeState) -> "ModeMoments":
        projector = get_projector(state.grid)
        coefficients = projector.coefficients(state.f_hat)
        micro = state.f_hat - projector.reconstruct(coefficients)
        moments = high_moments(micro, state.grid).combined(1)
        return cls(
            a=coefficients[:2],
            b=coefficients[2:5],
            c=complex(coefficients[5]),
            micro=micro,
            Theta=moments.Theta[0],
            Lambda=moments.Lambda[0],
            j=difference_current(state.f_hat, state.grid),
        )


def lyapunov_interactive_1(
    state: ModeState,
    kappa1: Optional[float] = None,
    kappa2: Optional[float] = None,
    moments: Optional[ModeMoments] = None,
) -> complex:
    kappa1 = settings.LYAPUNOV_DEFAULTS["kappa1"] if kappa1 is None else kappa1
    kappa2 = settings.LYAPUNOV_DEFAULTS["kappa2"] if kappa2 is None else kappa2
    m = ModeMoments.of(state) if moments is None else moments
    k = state.k
    ik = 1j * k

    energy = sum(0.5 * _pairing(ik[i] * m.c, m.Lambda[i]) for i in range(3))
    stress = sum(
        _pairing(
            ik[i] * m.b[j] + ik[j] * m.b[i],
            0.5 * m.Theta[i, j] + 2.0 * m.c * float(i == j),
        )
        for i in range(3)
        for j in range(3)
    )
    mass = sum(_pairing(ik[i] * 0.5 * (m.a[0] + m.a[1]), m.b[i]) for i in range(3))
    return (energy + kappa1 * stress + kappa2 * mass) / (1.0 + float(k @ k))


def lyapunov_interactive_2(
    state: ModeState, moments: Optional[ModeMoments] = None
) -> complex:
    m = ModeMoments.of(state) if moments is None else moments
    k = state.k
    charge = m.a[0] - m.a[1]
    return _pairing(m.j, 1j * k * charge) / (1.0 + float(k @ k))


def lyapunov_total(
    state: ModeState, cfg: LyapunovConfig, moments: Optional[ModeMoments] = None
) -> float:
    m = ModeMoments.of(state) if moments is None else moments
    interactive = lyapunov_interactive_1(state, cfg.kappa1, cfg.kappa2, m)
    interactive += lyapunov_interactive_2(state, m)
    total = state.base_energy + cfg.kappa3 * interactive.real
    if cfg.is_unweighted:
        return total
    if state.k_norm <= 1.0:
        return total + cfg.kappa4 * _norm_squared(m.micro, state.grid, cfg.ell)
    return total + cfg.kappa5 * _norm_squared(state.f_hat, state.grid, cfg.ell)


def equivalent_norm(state: ModeState, ell: float = 0.0) -> float:
    """|w_ell f_hat|_2^2 + |k|^2 |phi_hat|^2."""
    field = state.k_norm**2 * abs(state.phi_hat) ** 2
    return _norm_squared(state.f_hat, state.grid, ell) + field


def random_mode_state(grid: VelocityGrid, k_norm: float, rng: np.random.Generator) -> ModeState:
    values = np.stack(
        [
            random_smooth_field(grid, rng, degree=3) + 1j * random_smooth_field(grid, rng, degree=3)
            for _ in range(2)
        ]
    )
    return ModeState(f_hat=values, k=np.array([k_norm, 0.0, 0.0]), grid=grid)


def equivalence_bounds(
    cfg: LyapunovConfig,
    grid: VelocityGrid,
    samples: int = 200,
    frequencies: Sequence[float] = PROBE_FREQUENCIES,
    seed: Optional[int] = None,
) -> tuple[float, float]:
    """Sampled [c, C] with c <= E_ell / (|w_ell f|^2 + |k|^2 |phi|^2) <= C.

    Raises LyapunovConfigError when c is not positive.
    """
    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    ratios = []
    for index in range(samples):
        state = random_mode_state(grid, frequencies[index % len(frequencies)], rng)
        ratios.append(lyapunov_total(state, cfg) / equivalent_norm(state, cfg.ell))
    low, high = float(min(ratios)), float(max(ratios))
    if low <= 0.0:
        raise LyapunovConfigError(
            f"Functional is not positive on probe states: min ratio {low:.3e} for {cfg}"
        )
    return low, high


def functional_series(traj: ModeTrajectory, cfg: LyapunovConfig) -> np.ndarray:
    return np.array([lyapunov_total(state, cfg) for state in traj.states()])


def _centered(values: np.ndarray, dt: float) -> np.ndarray:
    return (values[2:] - values[:-2]) / (2.0 * dt)


def _uniform_step(traj: ModeTrajectory) -> float:
    if len(traj) < MIN_SAMPLES:
        raise GridError(f"Need at least {MIN_SAMPLES} samples, got {len(traj)}")
    steps = np.diff(traj.times)
    if np.ptp(steps) > 1e-9 * steps.mean():
        raise GridError("Inequality checks need uniformly spaced samples")
    return float(steps[0])


def _allowed(count: int) -> int:
    return int(np.floor((1.0 - REQUIRED_FRACTION) * count))


def fit_dissipation(
    name: str,
    rate: np.ndarray,
    dissipation: np.ndarray,
    k_norm: float,
    slack: float = 0.0,
) -> InequalityFit:
    """Largest lambda >= 0 with rate + lambda * dissipation <= slack at 99% of samples."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = np.where(
            dissipation > 0.0,
            (slack - rate) / dissipation,
            np.where(rate <= slack, np.inf, -np.inf),
        )
    ordered = np.sort(bounds)
    constant = max(float(ordered[_allowed(len(ordered))]), 0.0)
    holds = rate + np.where(np.isinf(constant), 0.0, constant) * dissipation <= slack
    if np.isinf(constant):
        half = np.zeros(len(rate), dtype=bool)
    else:
        half = rate + 0.5 * constant * dissipation > slack
    return InequalityFit(
        name=name,
        constant=constant,
        satisfied_fraction=float(np.mean(holds | (bounds >= constant))),
        violations_at_half=int(half.sum()),
        samples=len(rate),
        k_norm=k_norm,
    )


def fit_bound(
    name: str, lhs: np.ndarray, rhs: np.ndarray, k_norm: float, slack: float = 0.0
) -> InequalityFit:
    """Smallest C >= 0 with lhs <= C * rhs + slack at 99% of samples."""
    with np.errstate(divide="ignore", invalid="ignore"):
        needed = np.where(
            lhs <= slack, 0.0, np.where(rhs > 0.0, (lhs - slack) / rhs, np.inf)
        )
    ordered = np.sort(needed)
    constant = float(ordered[len(ordered) - 1 - _allowed(len(ordered))])
    return InequalityFit(
        name=name,
        constant=constant,
        satisfied_fraction=float(np.mean(needed <= constant)),
        violations_at_half=int(np.sum(needed > 0.5 * constant)) if constant > 0 else 0,
        samples=len(lhs),
        k_norm=k_norm,
        larger_is_better=False,
    )


def verify_mode_inequality(traj: ModeTrajectory, cfg: LyapunovConfig) -> InequalityFit:
    """Fit lambda in d/dt E_ell + lambda (1 ^ |k|^2) E_{ell-1} <= 0 along a trajectory."""
    dt = _uniform_step(traj)
    k_norm = float(np.linalg.norm(traj.k))
    values = functional_series(traj, cfg)
    lower = functional_series(traj, cfg.shifted(-1.0))
    rate = _centered(values, dt)
    dissipation = min(1.0, k_norm**2) * lower[1:-1]
    slack = 1e-10 * float(np.max(np.abs(values))) / dt
    fit = fit_dissipation("mode_lyapunov", rate, dissipation, k_norm, slack)
    logger.debug(
        f"Mode |k|={k_norm:.3g}: lambda_hat={fit.constant:.4g}, "
        f"{fit.violations_at_half} violations at half"
    )
    return fit


def base_dissipation_fraction(traj: ModeTrajectory, slack: float = 1e-8) -> float:
    """Fraction of steps over which |f|^2 + 2|k|^2|phi|^2 does not increase."""
    energy = traj.base_energy()
    scale = max(float(energy.max()), 1e-300)
    return float(np.mean(np.diff(energy) <= slack * scale))


def _source(traj: ModeTrajectory) -> np.ndarray:
    return np.zeros_like(traj.f_hat) if traj.g_hat is None else traj.g_hat


def weighted_inequalities(
    traj: ModeTrajectory,
    ell: Optional[float] = None,
    dissipation: Optional[float] = None,
    radius: Optional[float] = None,
) -> dict[str, InequalityFit]:
    """Fitted right-side constants of the two weighted instantaneous inequalities."""
    dt = _uniform_step(traj)
    grid = traj.grid
    ell = settings.LYAPUNOV_DEFAULTS["ell"] if ell is None else ell
    lam = settings.WEIGHTED_LAMBDA if dissipation is None else dissipation
    radius = settings.BALL_RADIUS if radius is None else radius
    projector = get_projector(grid)
    k_norm = float(np.linalg.norm(traj.k))
    ball = (grid.speed <= radius).astype(float)
    w2 = WeightSpec(ell=2.0 * ell).values(grid)
    weight = WeightSpec(ell=ell)

    f = traj.f_hat
    g = _source(traj)
    r = projector.micro(f)
    r_g = projector.micro(g)
    phi = k_norm**2 * np.abs(traj.phi_hat) ** 2

    micro_energy = np.array([_norm_squared(x, grid, ell) for x in r])
    full_energy = np.array([_norm_squared(x, grid, ell) for x in f])
    micro_sigma = np.array([sigma_norm_squared(x, grid, weight) for x in r])
    full_sigma = np.array([sigma_norm_squared(x, grid, weight) for x in f])
    f_minus_one = np.array([_norm_squared(x, grid, -1.0) for x in f])
    r_ball = np.array([_norm_squared(ball * x, grid) for x in r])
    f_ball = np.array([_norm_squared(ball * x, grid) for x in f])
    micro_source = np.abs(np.sum(w2 * r_g * np.conj(r), axis=(1, 2, 3, 4))) * grid.weight
    full_source = np.abs(np.sum(w2 * g * np.conj(f), axis=(1, 2, 3, 4))) * grid.weight

    inner = slice(1, -1)
    scale = max(float(full_energy.max()), 1e-300) * 1e-10 / dt
    micro_lhs = _centered(micro_energy, dt) + lam * micro_sigma[inner]
    micro_rhs = k_norm**2 * f_minus_one + r_ball + phi + micro_source
    full_lhs = 0.5 * _centered(full_energy, dt) + lam * full_sigma[inner]
    full_rhs = f_ball + phi + full_source
    return {
        "weighted_micro": fit_bound(
            "weighted_micro", micro_lhs, micro_rhs[inner], k_norm, scale
        ),
        "weighted_full": fit_bound(
            "weighted_full", full_lhs, full_rhs[inner], k_norm, scale
        ),
    }


def macro_dissipation(
    traj: ModeTrajectory,
    cfg: Optional[LyapunovConfig] = None,
    m: float = 0.0,
    dissipation: Optional[float] = None,
) -> InequalityFit:
    """Fit C in d/dt Re E1 + lambda |k|^2/(1+|k|^2)(|a_+ + a_-|^2 + |b|^2 + |c|^2)
    <= C (|(I-P) f|_{2,-m}^2 + |g|_{2,-m}^2)."""
    cfg = LyapunovConfig.from_settings() if cfg is None else cfg
    dt = _uniform_step(traj)
    grid = traj.grid
    lam = settings.WEIGHTED_LAMBDA if dissipation is None else dissipation
    k_norm = float(np.linalg.norm(traj.k))
    g = _source(traj)

    interactive, macro, micro = [], [], []
    for state in traj.states():
        moments = ModeMoments.of(state)
        interactive.append(
            lyapunov_interactive_1(state, cfg.kappa1, cfg.kappa2, moments).real
        )
        macro.append(
            abs(moments.a[0] + moments.a[1]) ** 2
            + float(np.sum(np.abs(moments.b) ** 2))
            + abs(moments.c) ** 2
        )
        micro.append(_norm_squared(moments.micro, grid, -m))
    sources = np.array([_norm_squared(x, grid, -m) for x in g])

    factor = k_norm**2 / (1.0 + k_norm**2)
    lhs = _centered(np.array(interactive), dt) + lam * factor * np.array(macro)[1:-1]
    rhs = (np.array(micro) + sources)[1:-1]
    return fit_bound("macro_dissipation", lhs, rhs, k_norm)


def kappa_search(
    trajectories: Sequence[ModeTrajectory],
    kappa1_grid: Sequence[float] = (0.1, 0.05, 0.02),
    kappa3_bounds: tuple[float, float] = (1e-3, 1.0),
    ell: float = 0.0,
    probe_samples: int = 50,
    seed: Optional[int] = None,
) -> tuple[LyapunovConfig, float]:
    """Bounded golden-section search on log kappa3 for each kappa1 (kappa2 = kappa1 / 10),
    maximizing the smallest verified lambda_hat over the trajectories."""
    if not trajectories:
        raise GridError("kappa_search needs at least one trajectory")
    grid = trajectories[0].grid
    best_cfg, best_value = None, -np.inf

    for kappa1 in kappa1_grid:

        def make(log_kappa3: float) -> LyapunovConfig:
            return LyapunovConfig(
                kappa1=kappa1,
                kappa2=kappa1 / 10.0,
                kappa3=float(np.exp(log_kappa3)),
                ell=ell,
            )

        def objective(log_kappa3: float) -> float:
            cfg = make(log_kappa3)
            try:
                equivalence_bounds(cfg, grid, samples=probe_samples, seed=seed)
            except LyapunovConfigError:
                return np.inf
            fits = [verify_mode_inequality(traj, cfg).constant for traj in trajectories]
            worst = min(fits)
            return -min(worst, 1e6)

        result = optimize.minimize_scalar(
            objective,
            bounds=tuple(np.log(kappa3_bounds)),
            method="bounded",
            options={"xatol": 0.05},
        )
        value = -float(result.fun)
        logger.debug(f"kappa1={kappa1:g}: kappa3={np.exp(result.x):.4g}, lambda_hat={value:.4g}")
        if value > best_value:
            best_cfg, best_value = make(float(result.x)), value

    if best_cfg is None or not np.isfinite(best_value) or best_value <= 0.0:
        raise LyapunovConfigError("No kappa choice produced a positive verified lambda")
    logger.info(f"Selected {best_cfg} with lambda_hat={best_value:.4g}")
    return best_cfg, best_value
