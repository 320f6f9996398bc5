from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger
from scipy import linalg

from config import settings
from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.models import SerializableModel
from core_apps.macro_micro.utils import null_space_basis
from core_apps.velocity_space.models import VelocityGrid, WeightSpec
from core_apps.velocity_space.utils import (
    monomial_exponents,
    random_smooth_field,
    sigma_inner,
    sigma_norm_squared,
    sqrt_maxwellian,
)


@dataclass
class CoercivityReport(SerializableModel):
    lambda_0: float
    sampled_minimum: float
    samples_used: int
    samples_skipped: int
    basis_size: int
    ell: float
    v_max: float
    n_per_axis: int
    weighted_minimum: Optional[float] = None
    sampled_ratios: list = field(default_factory=list, repr=False)


def default_coercivity_grid() -> VelocityGrid:
    return VelocityGrid(v_max=settings.COERCIVITY_V_MAX, n_per_axis=12)


def galerkin_basis(grid: VelocityGrid, degree: int) -> np.ndarray:
    """sqrt(mu) v^alpha on one species at a time, |alpha| <= degree; shape (K, 2, n, n, n)."""
    v = grid.mesh
    root = sqrt_maxwellian(grid)
    functions = []
    for a, b, c in monomial_exponents(degree):
        values = root * v[0] ** a * v[1] ** b * v[2] ** c
        for species in range(2):
            pair = np.zeros((2,) + grid.shape)
            pair[species] = values
            functions.append(pair)
    return np.stack(functions)


def galerkin_lambda(operator: CollisionOperator, degree: int) -> tuple[float, int]:
    """Smallest generalized eigenvalue of <b, L b> against the sigma form on the micro trial space."""
    grid = operator.grid
    basis = operator.projector.micro(galerkin_basis(grid, degree))
    applied = operator.linearized_L(basis)
    k = basis.shape[0]
    flat_basis = basis.reshape(k, -1)
    stiffness = flat_basis @ applied.reshape(k, -1).T * grid.weight
    stiffness = 0.5 * (stiffness + stiffness.T)
    mass = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            mass[i, j] = mass[j, i] = sigma_inner(basis[i], basis[j], grid)
    values, vectors = linalg.eigh(mass)
    keep = values > 1e-10 * values.max()
    transform = vectors[:, keep] / np.sqrt(values[keep])
    reduced = transform.T @ stiffness @ transform
    eigenvalues = linalg.eigh(reduced, eigvals_only=True)
    return float(eigenvalues[0]), int(keep.sum())


def sampled_ratios(
    operator: CollisionOperator,
    samples: int,
    rng: np.random.Generator,
    ell: float = 0.0,
) -> tuple[list[float], list[float], int]:
    """Rayleigh quotients <g, L g> / |(I-P) g|_sigma^2 over random smooth pairs.

    Pairs whose micro part vanishes are skipped and counted.
    """
    grid = operator.grid
    weight = WeightSpec(ell=ell) if ell else None
    ratios, weighted, skipped = [], [], 0
    for _ in range(samples):
        g = np.stack([random_smooth_field(grid, rng) for _ in range(2)])
        micro = operator.projector.micro(g)
        denominator = sigma_norm_squared(micro, grid)
        if denominator <= 1e-14 * max(sigma_norm_squared(g, grid), 1e-300):
            skipped += 1
            continue
        lg = operator.linearized_L(g)
        ratios.append(float(np.sum(g * lg) * grid.weight) / denominator)
        if weight is not None:
            w2 = WeightSpec(ell=2.0 * ell).values(grid)
            numerator = float(np.sum(w2 * lg * g) * grid.weight)
            weighted.append(numerator / sigma_norm_squared(micro, grid, weight=weight))
    return ratios, weighted, skipped


def coercivity_estimate(
    grid: Optional[VelocityGrid] = None,
    ell: float = 0.0,
    samples: Optional[int] = None,
    degree: Optional[int] = None,
    seed: Optional[int] = None,
    delta_reg: Optional[float] = None,
) -> CoercivityReport:
    grid = default_coercivity_grid() if grid is None else grid
    samples = settings.COERCIVITY_SAMPLES if samples is None else samples
    degree = settings.COERCIVITY_DEGREE if degree is None else degree
    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    operator = get_operator(grid, delta_reg)

    lambda_0, basis_size = galerkin_lambda(operator, degree)
    ratios, weighted, skipped = sampled_ratios(operator, samples, rng, ell)
    report = CoercivityReport(
        lambda_0=lambda_0,
        sampled_minimum=min(ratios) if ratios else float("inf"),
        samples_used=len(ratios),
        samples_skipped=skipped,
        basis_size=basis_size,
        ell=ell,
        v_max=grid.v_max,
        n_per_axis=grid.n_per_axis,
        weighted_minimum=min(weighted) if weighted else None,
        sampled_ratios=ratios,
    )
    logger.info(
        f"Coercivity on n={grid.n_per_axis}: lambda_0={lambda_0:.4g}, "
        f"sampled min={report.sampled_minimum:.4g} over {len(ratios)} pairs"
    )
    return report


def null_space_residuals(grid: VelocityGrid, delta_reg: Optional[float] = None) -> np.ndarray:
    """|L psi| / |psi| for the six generators of the null space."""
    operator = get_operator(grid, delta_reg)
    basis = null_space_basis(grid)
    applied = operator.linearized_L(basis)
    norms = np.sqrt(np.sum(basis**2, axis=(1, 2, 3, 4)))
    return np.sqrt(np.sum(applied**2, axis=(1, 2, 3, 4))) / norms
