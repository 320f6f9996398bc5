from typing import Optional, Union

import numpy as np
from loguru import logger

from config import settings
from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.errors import GridError, LyapunovConfigError, WeightError
from core_apps.field.utils import slab_phi_time_derivative, sup_norm
from core_apps.linear_decay.lyapunov import (
    ModeMoments,
    lyapunov_interactive_1,
    lyapunov_interactive_2,
)
from core_apps.linear_decay.models import ModeState
from core_apps.macro_micro.utils import difference_current, get_projector, species_moment
from core_apps.nonlinear_sim.equations import SIGNS, nonlinear_source
from core_apps.nonlinear_sim.models import SimState, SimTrajectory, SlabGrid, ZetaValues
from core_apps.velocity_space.models import WeightSpec
from core_apps.velocity_space.utils import (
    boundary_mask,
    monomial_exponents,
    nested_v_derivative,
    random_smooth_field,
    sigma_norm_squared,
    sqrt_maxwellian,
)

MAX_ORDER = 3
BOUNDARY_LAYERS = 2


def _check_orders(m: int, l: float) -> None:
    if not 0 <= m <= MAX_ORDER:
        raise GridError(f"Derivative order m must lie in [0, {MAX_ORDER}], got {m}")
    if l < m:
        raise WeightError(f"Weight index l={l} must be at least m={m}")


def _x_derivatives(grid: SlabGrid, values: np.ndarray, m: int) -> list[np.ndarray]:
    out = [values]
    for _ in range(m):
        out.append(grid.x_derivative(out[-1]))
    return out


def _multi_indices(m: int, max_alpha: Optional[int] = None):
    """(a, beta) with a + |beta| <= m; a counts x_1 derivatives, the only nonzero ones."""
    top = m if max_alpha is None else min(m, max_alpha)
    for a in range(top + 1):
        for beta in monomial_exponents(m - a):
            yield a, beta


def _weighted_square(values: np.ndarray, grid: SlabGrid, weight=1.0, mask=None) -> float:
    """int int |weight * values|^2 over the slab, summed over species."""
    density = np.abs(weight * values) ** 2
    if mask is not None:
        density = density * mask
    return float(np.sum(density) * grid.velocity.weight * grid.geometry.dx)


def _sigma_square(values: np.ndarray, grid: SlabGrid, weight=None, mask=None) -> float:
    return sigma_norm_squared(values, grid.velocity, weight, mask) * grid.geometry.dx


def energy_functionals(
    source: Union[SimState, SimTrajectory], m: int = 3, l: float = 3.0
) -> dict:
    """Instant energy, dissipation rate and its variant without v-derivatives.

    For a trajectory each entry is an array over the stored samples.
    """
    _check_orders(m, l)
    if isinstance(source, SimTrajectory):
        per_state = [energy_functionals(state, m, l) for state in source.states()]
        return {name: np.array([row[name] for row in per_state]) for name in per_state[0]}

    state = source
    grid = state.grid
    velocity = grid.velocity
    projector = get_projector(velocity)
    mask = boundary_mask(velocity, BOUNDARY_LAYERS)
    if m > 0:
        logger.debug(
            f"v-derivative terms skip the outer {BOUNDARY_LAYERS} velocity layers"
        )

    x_full = _x_derivatives(grid, state.f, m)
    x_micro = [projector.micro(values) for values in x_full]
    field = grid.integrate(state.E1**2)

    energy = dissipation = weightless = field
    for a, beta in _multi_indices(m):
        order = sum(beta)
        region = mask if order else None
        weight = WeightSpec(ell=l, alpha_order=a, beta_order=order)
        full = nested_v_derivative(x_full[a], velocity, beta) if order else x_full[a]
        micro = nested_v_derivative(x_micro[a], velocity, beta) if order else x_micro[a]
        energy += _weighted_square(full, grid, weight.values(velocity), region)
        dissipation += _sigma_square(micro, grid, weight, region)
        if not order:
            # x-derivatives only, weighted as w(alpha, 0)
            weightless += _sigma_square(micro, grid, weight)
    for a in range(1, m + 1):
        macro = _weighted_square(x_full[a] - x_micro[a], grid)
        dissipation += macro
        weightless += macro
    return {"energy": energy, "dissipation": dissipation, "dissipation_weightless": weightless}


def _zeta_weights(weights: Optional[dict]) -> dict:
    merged = dict(settings.ZETA_WEIGHTS)
    merged.update(weights or {})
    if len(merged["eta_interactive"]) != 3:
        raise LyapunovConfigError("eta_interactive needs three entries")
    return merged


def interactive_terms(state: SimState, weights: Optional[dict] = None) -> tuple[float, float]:
    """Fourier-side interactive functionals summed over slab modes, for zeta and zeta^h."""
    eta = _zeta_weights(weights)["eta_interactive"]
    grid = state.grid
    velocity = grid.velocity
    kappa1 = settings.LYAPUNOV_DEFAULTS["kappa1"]
    kappa2 = settings.LYAPUNOV_DEFAULTS["kappa2"]
    spectrum = np.fft.fft(state.f, axis=0)
    parseval = grid.length / grid.n_x**2
    full = reduced = 0.0
    for index, k in enumerate(grid.geometry.derivative_wavenumbers):
        if k == 0.0:
            continue
        mode = ModeState(f_hat=spectrum[index], k=np.array([k, 0.0, 0.0]), grid=velocity)
        moments = ModeMoments.of(mode)
        first = lyapunov_interactive_1(mode, kappa1, kappa2, moments).real
        second = lyapunov_interactive_2(mode, moments).real
        scale = sum(e * k ** (2 * j) for j, e in enumerate(eta)) * (1.0 + k * k) * parseval
        full += scale * (first + second)
        reduced += scale * first
    return full, reduced


def zeta_functionals(
    state: SimState,
    p_prime: Optional[float] = None,
    t: Optional[float] = None,
    weights: Optional[dict] = None,
    ell: float = 3.0,
) -> ZetaValues:
    """zeta, zeta^h and their splits at <v> = t^{p'}.

    The low and high parts partition the kinetic terms; the first field term sits in
    the low part, and the higher field and interactive terms enter only zeta and zeta^h.
    """
    p_prime = settings.P_PRIME if p_prime is None else p_prime
    if not 0.0 < p_prime < 0.5:
        raise GridError(f"p' must lie in (0, 1/2), got {p_prime}")
    t = state.t if t is None else t
    if t < 0.0:
        raise GridError(f"Split time must be nonnegative, got {t}")
    w = _zeta_weights(weights)
    grid = state.grid
    velocity = grid.velocity
    projector = get_projector(velocity)
    edge = boundary_mask(velocity, BOUNDARY_LAYERS)
    low = velocity.bracket < t**p_prime
    high = ~low
    tilt = np.exp(2.0 * SIGNS * state.phi[:, None, None, None, None])

    x_full = _x_derivatives(grid, state.f, MAX_ORDER)
    x_micro = [projector.micro(values) for values in x_full]

    def split(values, weight=1.0, mask=None):
        region = 1.0 if mask is None else mask
        return np.array(
            [
                0.5 * _weighted_square(values, grid, weight, region * low),
                0.5 * _weighted_square(values, grid, weight, region * high),
            ]
        )

    plain = split(x_full[0])
    plain_micro = split(x_micro[0])
    tilted = sum(split(np.sqrt(tilt) * x_full[a]) for a in range(1, MAX_ORDER + 1))
    weighted = sum(
        w["eta_alpha"]
        * split(
            np.sqrt(tilt) * x_full[a],
            WeightSpec(ell=ell, alpha_order=a, beta_order=0).values(velocity),
        )
        for a in range(1, MAX_ORDER + 1)
    )
    mixed = np.zeros(2)
    for a, beta in _multi_indices(MAX_ORDER, max_alpha=2):
        order = sum(beta)
        values = nested_v_derivative(x_micro[a], velocity, beta) if order else x_micro[a]
        weight = WeightSpec(ell=ell, alpha_order=a, beta_order=order).values(velocity)
        mixed += w["eta_alpha_beta"] * split(
            np.sqrt(tilt) * values, weight, edge if order else None
        )

    E = _x_derivatives(grid, state.E1, MAX_ORDER)
    field0 = grid.integrate(E[0] ** 2)
    field_high = sum(grid.integrate(E[a] ** 2) for a in range(1, MAX_ORDER + 1))
    current = difference_current(x_micro[0], velocity)[0]
    current_field = -w["eta_field"] * grid.integrate(current * state.E1)
    full_int, reduced_int = interactive_terms(state, w)

    c_alpha = w["c_alpha"]
    core = plain + tilted + weighted + mixed
    core_h = plain_micro + c_alpha * tilted + weighted + mixed
    return ZetaValues(
        zeta=float(core.sum() + field0 + field_high + current_field + full_int),
        zeta_h=float(
            core_h.sum() + field0 + c_alpha * field_high + current_field + reduced_int
        ),
        zeta_low=float(core[0] + field0),
        zeta_high=float(core[1]),
        zeta_h_low=float(core_h[0] + field0),
        zeta_h_high=float(core_h[1]),
    )


def random_slab_state(
    grid: SlabGrid, rng: np.random.Generator, amplitude: float = 1e-3
) -> SimState:
    """Neutral state built from the first two x_1 harmonics with random smooth profiles."""
    velocity = grid.velocity
    f = np.zeros(grid.shape)
    for harmonic in (1, 2):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        profile = np.stack([random_smooth_field(velocity, rng, degree=3) for _ in range(2)])
        wave = np.cos(2.0 * np.pi * harmonic * grid.x / grid.length + phase)
        f += wave[:, None, None, None, None] * profile[None]
    return SimState(f=amplitude * f, grid=grid)


def zeta_equivalence_bounds(
    grid: SlabGrid,
    samples: int = 50,
    amplitude: float = 1e-3,
    seed: Optional[int] = None,
    weights: Optional[dict] = None,
) -> tuple[float, float]:
    """Sampled [c, C] with c <= zeta / E_{3;3} <= C."""
    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    ratios = []
    for _ in range(samples):
        state = random_slab_state(grid, rng, amplitude)
        energy = energy_functionals(state, 3, 3.0)["energy"]
        ratios.append(zeta_functionals(state, weights=weights).zeta / energy)
    low, high = float(min(ratios)), float(max(ratios))
    if low <= 0.0:
        raise LyapunovConfigError(f"zeta is not positive on probe states: min ratio {low:.3e}")
    logger.info(f"zeta / E_3;3 in [{low:.4g}, {high:.4g}] over {samples} states")
    return low, high


def _source_terms(
    source: np.ndarray, grid: SlabGrid
) -> tuple[float, float, float]:
    """|<[v,-v] sqrt(mu), N>|^2, the summed moment norms of d^a N, and |N|_H1 + |N|_Z1."""
    velocity = grid.velocity
    root = sqrt_maxwellian(velocity)
    v = velocity.mesh
    current = difference_current(source, velocity)
    current_norm = grid.integrate(np.sum(current**2, axis=0))

    derivatives = _x_derivatives(grid, source, 2)
    moments = 0.0
    for values in derivatives:
        for a, b, c in monomial_exponents(3):
            test = v[0] ** a * v[1] ** b * v[2] ** c * root
            moments += grid.integrate(np.sum(species_moment(values, test, velocity) ** 2, axis=0))

    h1 = np.sqrt(sum(_weighted_square(values, grid) for values in derivatives[:2]))
    x_l1 = np.sum(np.abs(source), axis=0) * grid.geometry.dx
    z1 = np.sqrt(float(np.sum(x_l1**2) * velocity.weight))
    return current_norm, moments, float(h1 + z1)


def ledger_entries(
    state: SimState,
    operator: Optional[CollisionOperator] = None,
    p_prime: Optional[float] = None,
    weights: Optional[dict] = None,
) -> dict[str, float]:
    velocity = state.grid.velocity
    grid = state.grid
    operator = get_operator(velocity) if operator is None else operator
    projector = get_projector(velocity)

    top = energy_functionals(state, 3, 3.0)
    entries = {
        "energy_2_2": energy_functionals(state, 2, 2.0)["energy"],
        "energy_3_3": top["energy"],
        "dissipation_3_3": top["dissipation"],
        "dissipation_weightless_3_3": top["dissipation_weightless"],
    }
    entries.update(zeta_functionals(state, p_prime, weights=weights).as_entries())

    j1 = difference_current(state.f, velocity)[0]
    entries["phi_t_sup"] = sup_norm(slab_phi_time_derivative(j1, grid.geometry))
    entries["grad_phi_sup"] = sup_norm(state.E1)

    micro = projector.micro(state.f)
    grad = grid.x_derivative(state.f)
    field = grid.integrate(state.E1**2)
    entries["field"] = field
    entries["base"] = 0.5 * _weighted_square(state.f, grid) + field
    pairing = np.sum(operator.linearized_L(state.f) * state.f)
    entries["collision_pairing"] = float(pairing * velocity.weight * grid.geometry.dx)
    entries["micro_sigma"] = _sigma_square(micro, grid)
    entries["grad_f_sigma"] = _sigma_square(grad, grid)
    entries["grad2_f_sigma"] = _sigma_square(grid.x_derivative(grad), grid)
    entries["grad_macro"] = _weighted_square(grad - projector.micro(grad), grid)
    micro_current = difference_current(micro, velocity)[0]
    entries["current_field"] = -grid.integrate(micro_current * state.E1)
    entries["total_charge"] = grid.integrate(state.charge)

    current, moments, size = _source_terms(nonlinear_source(state, operator), grid)
    entries["source_current"] = current
    entries["source_moments"] = moments
    entries["source_size"] = size
    return entries
