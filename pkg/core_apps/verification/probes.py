import itertools
from functools import partial
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from config import settings
from core_apps.collision.operators import get_operator
from core_apps.common.errors import FitError, WeightError
from core_apps.common.tasks import ordered_map
from core_apps.velocity_space.models import VelocityGrid, WeightSpec
from core_apps.velocity_space.utils import (
    boundary_mask,
    nested_v_derivative,
    pv_project,
    random_smooth_field,
    sigma_norm,
    sigma_norm_squared,
    v_gradient,
    weighted_lp_norm,
)
from core_apps.verification.models import ProbeReport, ProbeSample

# v-derivative orders cycled through the samples; |beta| <= 1
BETAS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


def probe_samples(
    grid: VelocityGrid,
    count: Optional[int] = None,
    seed: Optional[int] = None,
    ell: float = 0.0,
    degree: int = 2,
) -> list[ProbeSample]:
    """Seeded triples of smooth pairs; sample i draws from the stream (seed, i).

    The polynomial coefficients do not depend on the grid, so the same seed
    probes the same functions at every resolution.
    """
    count = settings.PROBE_SAMPLES if count is None else count
    seed = settings.SEED if seed is None else seed
    samples = []
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        g1, g2, g3 = (
            np.stack([random_smooth_field(grid, rng, degree) for _ in range(2)])
            for _ in range(3)
        )
        samples.append(
            ProbeSample(
                index=index,
                seed=seed,
                grid=grid,
                g1=g1,
                g2=g2,
                g3=g3,
                beta=BETAS[index % len(BETAS)],
                ell=ell,
            )
        )
    return samples


def _below(beta: Sequence[int]):
    return itertools.product(*(range(order + 1) for order in beta))


def _minus(beta: Sequence[int], other: Sequence[int]) -> tuple[int, int, int]:
    return tuple(b - o for b, o in zip(beta, other))


def trilinear_terms(sample: ProbeSample, decay: Optional[float] = None) -> tuple[float, float]:
    """|<w_2l d_beta Gamma(g1, g2), d_beta g3>| and the Leibniz sum of norm products."""
    decay = settings.PROBE_DECAY if decay is None else decay
    grid = sample.grid
    beta = sample.beta
    operator = get_operator(grid)
    mask = boundary_mask(grid) if any(beta) else None
    region = 1.0 if mask is None else mask

    def d(values, order):
        return nested_v_derivative(values, grid, order) if any(order) else values

    gamma = operator.gamma_nonlinear(sample.g1, sample.g2)
    pairing = WeightSpec(ell=2.0 * sample.ell).values(grid) * d(gamma, beta) * d(sample.g3, beta)
    lhs = abs(float(np.sum(pairing * region) * grid.weight))

    sigma = WeightSpec(ell=sample.ell)
    light = WeightSpec(ell=-decay)
    g3_norm = sigma_norm(d(sample.g3, beta), grid, sigma, mask)
    rhs = 0.0
    for beta1 in _below(beta):
        g2_norm = sigma_norm(d(sample.g2, _minus(beta, beta1)), grid, sigma, mask)
        for bar in _below(beta1):
            g1_norm = weighted_lp_norm(d(sample.g1, bar), grid, 2, light, mask)
            rhs += g1_norm * g2_norm * g3_norm
    return lhs, rhs


def lbound_terms(g: np.ndarray, grid: VelocityGrid, ell: float = 0.0) -> dict[str, float]:
    """|g|^2_sigma,w_l and the radial, tangential and zeroth pieces bounding it below."""
    weight = WeightSpec(ell=ell)
    grad = v_gradient(g, grid)
    radial = pv_project(grad, grid)
    damping = 1.0 + grid.speed
    return {
        "sigma": sigma_norm_squared(g, grid, weight),
        "radial": weighted_lp_norm(damping**-1.5 * radial, grid, 2, weight) ** 2,
        "tangential": weighted_lp_norm(damping**-0.5 * (grad - radial), grid, 2, weight) ** 2,
        "zeroth": weighted_lp_norm(damping**-0.5 * g, grid, 2, weight) ** 2,
    }


def _trilinear_ratio(sample: ProbeSample, decay: float) -> Optional[float]:
    lhs, rhs = trilinear_terms(sample, decay)
    if lhs == 0.0:
        return 0.0
    return lhs / rhs if rhs > 0.0 else None


def _lbound_ratio(sample: ProbeSample) -> Optional[float]:
    terms = lbound_terms(sample.g1, sample.grid, sample.ell)
    lower = terms["radial"] + terms["tangential"] + terms["zeroth"]
    return terms["sigma"] / lower if lower > 0.0 else None


def _report(name: str, samples: Sequence[ProbeSample], ratios: list) -> ProbeReport:
    used = [r for r in ratios if r is not None]
    if not used:
        raise FitError(f"{name}: every one of {len(ratios)} samples was skipped")
    first = samples[0]
    report = ProbeReport(
        name=name,
        seed=first.seed,
        n_per_axis=first.grid.n_per_axis,
        v_max=first.grid.v_max,
        samples_used=len(used),
        samples_skipped=len(ratios) - len(used),
        maximum=float(np.max(used)),
        minimum=float(np.min(used)),
        median=float(np.median(used)),
        ratios=[float(r) if r is not None else None for r in ratios],
    )
    logger.info(
        f"{name} on n={report.n_per_axis}: ratio in [{report.minimum:.4g}, "
        f"{report.maximum:.4g}] over {report.samples_used} samples "
        f"({report.samples_skipped} skipped)"
    )
    return report


def trilinear_probe(
    samples: Sequence[ProbeSample], decay: Optional[float] = None, workers: int = 1
) -> ProbeReport:
    decay = settings.PROBE_DECAY if decay is None else decay
    if decay < 4.0:
        raise WeightError(f"The g1 weight needs decay b >= 4, got {decay}")
    ratios = ordered_map(partial(_trilinear_ratio, decay=decay), samples, workers)
    return _report("trilinear", samples, ratios)


def lbound_probe(samples: Sequence[ProbeSample], workers: int = 1) -> ProbeReport:
    ratios = ordered_map(_lbound_ratio, samples, workers)
    return _report("lbound", samples, ratios)
