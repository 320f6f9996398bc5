import math
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from core_apps.common.errors import QuadratureError, WeightError
from core_apps.velocity_space.models import VelocityField, VelocityGrid, WeightSpec

ArrayLike = Union[np.ndarray, VelocityField]

MAXWELLIAN_NORM = (2.0 * np.pi) ** -1.5


def as_array(f: ArrayLike) -> np.ndarray:
    if isinstance(f, VelocityField):
        return f.values
    return np.asarray(f)


def maxwellian(grid: VelocityGrid) -> np.ndarray:
    return MAXWELLIAN_NORM * np.exp(-0.5 * grid.speed_squared)


def sqrt_maxwellian(grid: VelocityGrid) -> np.ndarray:
    return np.sqrt(MAXWELLIAN_NORM) * np.exp(-0.25 * grid.speed_squared)


def maxwellian_field(grid: VelocityGrid) -> VelocityField:
    return VelocityField(values=maxwellian(grid), grid=grid)


def broadcast_vector(vector: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape a (3, n, n, n) node vector to broadcast against a (3, ..., n, n, n) array."""
    extra = ndim - vector.ndim
    return vector.reshape((3,) + (1,) * extra + vector.shape[1:])


@lru_cache(maxsize=32)
def gradient_matrix(n: int, h: float) -> np.ndarray:
    """1-D second-order gradient: central inside, one-sided second order at both ends."""
    d = np.zeros((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5
        d[i, i + 1] = 0.5
    d[0, :3] = (-1.5, 2.0, -0.5)
    d[-1, -3:] = (0.5, -2.0, 1.5)
    d /= h
    d.setflags(write=False)
    return d


@lru_cache(maxsize=32)
def weighted_gradient_matrix(n: int, h: float, scale: float) -> np.ndarray:
    """exp(-scale x^2) D exp(+scale x^2): the gradient conjugated by a Gaussian factor.

    Entries stay bounded because D only couples nodes at most two cells apart.
    """
    x = (np.arange(n) + 0.5 - n / 2) * h
    d = gradient_matrix(n, h)
    ratio = np.exp(scale * (x[None, :] ** 2 - x[:, None] ** 2))
    out = np.where(d != 0.0, d * ratio, 0.0)
    out.setflags(write=False)
    return out


def apply_along(matrix: np.ndarray, f: np.ndarray, axis: int) -> np.ndarray:
    """Apply an (n, n) matrix along velocity axis 0, 1 or 2 of a (..., n, n, n) array."""
    target = axis - 3
    moved = np.moveaxis(f, target, -1)
    return np.moveaxis(moved @ matrix.T, -1, target)


def v_gradient(f: ArrayLike, grid: VelocityGrid, stencil: str = "central") -> np.ndarray:
    """Discrete velocity gradient, shape (3, *f.shape).

    stencil="flux" applies the negative adjoint of the gradient, the conservative
    divergence stencil; it agrees with the central stencil away from the boundary.
    """
    values = as_array(f)
    d = gradient_matrix(grid.n_per_axis, grid.h)
    if stencil == "central":
        matrix = d
    elif stencil == "flux":
        matrix = -d.T
    else:
        raise ValueError(f"Unknown stencil {stencil!r}")
    return np.stack([apply_along(matrix, values, axis) for axis in range(3)])


def v_divergence(flux: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Sum of flux-stencil derivatives; its sum over the grid is zero for any input."""
    d = gradient_matrix(grid.n_per_axis, grid.h)
    return sum(apply_along(-d.T, flux[axis], axis) for axis in range(3))


def weighted_lp_norm(
    f: ArrayLike,
    grid: VelocityGrid,
    p: int = 2,
    weight: Optional[WeightSpec] = None,
    mask: Optional[np.ndarray] = None,
) -> float:
    if p not in (1, 2):
        raise WeightError(f"p must be 1 or 2, got {p}")
    values = np.abs(as_array(f))
    if weight is not None:
        values = values * weight.values(grid)
    if mask is not None:
        values = values * mask
    total = np.sum(values**p) * grid.weight
    return float(total ** (1.0 / p))


def sigma_components(f: ArrayLike, grid: VelocityGrid) -> tuple[np.ndarray, ...]:
    """The three pieces of the anisotropic norm, each node-wise and unweighted."""
    values = as_array(f)
    grad = v_gradient(values, grid)
    unit = broadcast_vector(grid.unit, grad.ndim)
    radial = np.sum(grad * unit, axis=0)
    cross = np.cross(grad, unit, axis=0)
    angular = np.sqrt(np.sum(np.abs(cross) ** 2, axis=0))
    return (
        grid.bracket**-0.5 * values,
        grid.bracket**-1.5 * radial,
        grid.bracket**-0.5 * angular,
    )


def sigma_norm(
    f: ArrayLike,
    grid: VelocityGrid,
    weight: Optional[WeightSpec] = None,
    mask: Optional[np.ndarray] = None,
) -> float:
    return sum(
        weighted_lp_norm(c, grid, 2, weight, mask) for c in sigma_components(f, grid)
    )


def sigma_norm_squared(
    f: ArrayLike,
    grid: VelocityGrid,
    weight: Optional[WeightSpec] = None,
    mask: Optional[np.ndarray] = None,
) -> float:
    return sum(
        weighted_lp_norm(c, grid, 2, weight, mask) ** 2
        for c in sigma_components(f, grid)
    )


def sigma_inner(
    f: ArrayLike,
    g: ArrayLike,
    grid: VelocityGrid,
    weight: Optional[WeightSpec] = None,
) -> float:
    """Real bilinear form whose diagonal is sigma_norm_squared, summed over leading axes."""
    f, g = as_array(f), as_array(g)
    w2 = 1.0 if weight is None else weight.values(grid) ** 2
    grad_f, grad_g = v_gradient(f, grid), v_gradient(g, grid)
    unit = broadcast_vector(grid.unit, grad_f.ndim)
    radial = np.sum(grad_f * unit, axis=0) * np.sum(grad_g * unit, axis=0)
    angular = np.sum(
        np.cross(grad_f, unit, axis=0) * np.cross(grad_g, unit, axis=0), axis=0
    )
    density = (
        grid.bracket**-1 * f * g
        + grid.bracket**-3 * radial
        + grid.bracket**-1 * angular
    )
    return float(np.sum(w2 * np.real(density)) * grid.weight)


def monomial_exponents(degree: int) -> list[tuple[int, int, int]]:
    return [
        (a, b, total - a - b)
        for total in range(degree + 1)
        for a in range(total + 1)
        for b in range(total + 1 - a)
    ]


def random_smooth_field(
    grid: VelocityGrid, rng: np.random.Generator, degree: int = 4
) -> np.ndarray:
    """sqrt(mu) times a polynomial with standard normal coefficients on v^alpha / sqrt(alpha!)."""
    v = grid.mesh
    poly = np.zeros(grid.shape)
    for a, b, c in monomial_exponents(degree):
        scale = 1.0 / math.sqrt(math.factorial(a) * math.factorial(b) * math.factorial(c))
        poly += rng.standard_normal() * scale * v[0] ** a * v[1] ** b * v[2] ** c
    return sqrt_maxwellian(grid) * poly


def pv_project(g: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Node-wise projection of a vector field onto the direction of v."""
    v = broadcast_vector(grid.mesh, g.ndim)
    coefficient = np.sum(g * v, axis=0) / grid.speed_squared
    return coefficient[None] * v


def nested_v_derivative(
    f: ArrayLike, grid: VelocityGrid, beta: Sequence[int]
) -> np.ndarray:
    values = as_array(f)
    if len(beta) != 3 or any(b < 0 for b in beta):
        raise ValueError(f"beta must be three nonnegative integers, got {beta}")
    d = gradient_matrix(grid.n_per_axis, grid.h)
    for axis, order in enumerate(beta):
        for _ in range(order):
            values = apply_along(d, values, axis)
    return values


def boundary_mask(grid: VelocityGrid, layers: int = 2) -> np.ndarray:
    """True on nodes at least `layers` cells away from every face of the box."""
    n = grid.n_per_axis
    keep = np.zeros(n, dtype=bool)
    keep[layers : n - layers] = True
    return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]


def radial_quadrature(
    integrand: Callable[[float], float], v_max: float = np.inf, rtol: float = 1e-12
) -> float:
    """4*pi * int_0^v_max integrand(r) r^2 dr for radial integrands."""
    value, error = integrate.quad(
        lambda r: integrand(r) * r * r, 0.0, v_max, epsabs=0.0, epsrel=rtol, limit=200
    )
    if not np.isfinite(value) or error > 1e-6 * max(abs(value), 1e-300):
        raise QuadratureError(f"Radial quadrature did not converge: {value} +- {error}")
    return 4.0 * np.pi * value
