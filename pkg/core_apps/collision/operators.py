from functools import lru_cache
from typing import Optional, Union

import numpy as np
from loguru import logger
from scipy import integrate

from config import settings
from core_apps.collision.models import COMPONENTS, KernelTable, SpeciesPair
from core_apps.common.errors import GridError, QuadratureError, SolverError
from core_apps.macro_micro.utils import get_projector
from core_apps.velocity_space.models import VelocityField, VelocityGrid
from core_apps.velocity_space.utils import (
    apply_along,
    as_array,
    broadcast_vector,
    sqrt_maxwellian,
    v_divergence,
    weighted_gradient_matrix,
)

PairLike = Union[np.ndarray, SpeciesPair]


def landau_kernel(v: np.ndarray) -> np.ndarray:
    """Phi(v) = (I - v v^T / |v|^2) / |v| for a nonzero 3-vector."""
    v = np.asarray(v, dtype=float)
    r2 = float(v @ v)
    if r2 == 0.0:
        raise ValueError("Landau kernel is singular at v = 0; use the self-cell average")
    return (np.eye(3) - np.outer(v, v) / r2) / np.sqrt(r2)


def kernel_components(d: np.ndarray) -> np.ndarray:
    """The six independent entries of Phi at difference vectors d of shape (3, ...).

    Entries at d = 0 are returned as zero.
    """
    r2 = np.sum(d * d, axis=0)
    safe = np.where(r2 > 0.0, r2, 1.0)
    inv_r = np.where(r2 > 0.0, 1.0 / np.sqrt(safe), 0.0)
    return np.stack(
        [(float(a == b) - d[a] * d[b] / safe) * inv_r for a, b in COMPONENTS]
    )


@lru_cache(maxsize=1)
def self_cell_constant() -> float:
    """Mean of 1/|x| over the unit cube centred at 0.

    By the divergence theorem this is (3/2) times the integral of
    1/sqrt(1/4 + y^2 + z^2) over one face.
    """
    value, error = integrate.dblquad(
        lambda z, y: 1.0 / np.sqrt(0.25 + y * y + z * z),
        -0.5,
        0.5,
        -0.5,
        0.5,
        epsabs=1e-14,
        epsrel=1e-13,
    )
    if error > 1e-10:
        raise QuadratureError(f"Self-cell quadrature error {error:.2e} too large")
    return 1.5 * value


def build_kernel_table(grid: VelocityGrid, delta_reg: Optional[float] = None) -> KernelTable:
    """Sample Phi on the difference lattice.

    Offsets with |d| < delta_reg h take the cell average of Phi, (2/3)(C/h) I; for
    0 < delta_reg <= 1 that is the zero offset alone.
    """
    delta_reg = settings.DELTA_REG if delta_reg is None else float(delta_reg)
    if not 0.0 < delta_reg <= 1.0:
        raise GridError(f"delta_reg must lie in (0, 1], got {delta_reg}")
    n = grid.n_per_axis
    offsets = np.arange(-(n - 1), n) * grid.h
    d = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"))
    components = kernel_components(d)
    self_cell = 2.0 * self_cell_constant() / (3.0 * grid.h)
    inside = np.sum(d * d, axis=0) < (delta_reg * grid.h) ** 2
    for c, (a, b) in enumerate(COMPONENTS):
        components[c][inside] = self_cell if a == b else 0.0
    logger.debug(f"Built Landau kernel table for n={n}, h={grid.h:.4g}")
    return KernelTable(
        grid=grid, delta_reg=delta_reg, self_cell=self_cell, components=components
    )


def _pair_values(g: PairLike, grid: VelocityGrid) -> np.ndarray:
    values = as_array(g)
    if values.shape[-4:] != (2,) + grid.shape:
        raise SolverError(
            f"Expected a species pair ending with {(2,) + grid.shape}, got {values.shape}"
        )
    return values


def _like(template: PairLike, values: np.ndarray, grid: VelocityGrid) -> PairLike:
    if isinstance(template, SpeciesPair):
        return SpeciesPair.from_array(values, grid)
    return values


class CollisionOperator:
    """Discrete Landau operator on one velocity grid.

    Gradients inside the flux are taken relative to the Maxwellian,
    grad H = mu D(H / mu) - v H, so that the discrete flux of Q(mu, mu)
    vanishes node by node. The divergence is the flux stencil, which makes
    mass, momentum and energy of Q(F, F) exact on the grid.
    """

    def __init__(self, grid: VelocityGrid, delta_reg: Optional[float] = None) -> None:
        self.grid = grid
        self.kernel = build_kernel_table(grid, delta_reg)
        self.delta_reg = self.kernel.delta_reg
        self.sqrt_mu = sqrt_maxwellian(grid)
        self.mu = self.sqrt_mu**2
        n, h = grid.n_per_axis, grid.h
        self._relative = weighted_gradient_matrix(n, h, 0.5)
        self._half = weighted_gradient_matrix(n, h, 0.25)
        self.sigma = self.kernel.convolve_tensor(self.mu)
        self.projector = get_projector(grid)

    # building blocks

    def mu_gradient(self, values: np.ndarray) -> np.ndarray:
        v = broadcast_vector(self.grid.mesh, values.ndim + 1)
        relative = np.stack(
            [apply_along(self._relative, values, axis) for axis in range(3)]
        )
        return relative - v * values[None]

    def half_gradient(self, values: np.ndarray) -> np.ndarray:
        """sqrt(mu) D (g / sqrt(mu)) per axis, i.e. grad g + v g / 2."""
        return np.stack([apply_along(self._half, values, axis) for axis in range(3)])

    def half_gradient_adjoint(self, flux: np.ndarray) -> np.ndarray:
        return sum(apply_along(self._half.T, flux[a], a) for a in range(3))

    def _guard(self, values: np.ndarray, name: str) -> np.ndarray:
        cap = settings.OVERFLOW_CAP
        if not np.all(np.isfinite(values)) or np.max(
            np.abs(values) * self.grid.bracket
        ) > cap:
            raise SolverError(f"{name} exceeded the overflow cap {cap:.1e}")
        return values

    # Q and its linearization

    def collide(self, G: np.ndarray, H: np.ndarray) -> np.ndarray:
        """Q(G, H) for scalar fields of shape (..., n, n, n)."""
        G, H = as_array(G), as_array(H)
        conv_G = self.kernel.convolve_tensor(G)
        conv_grad = self.kernel.convolve_vector(self.mu_gradient(G))
        return self._collide_with(conv_G, conv_grad, H)

    def _collide_with(
        self, conv_G: np.ndarray, conv_grad: np.ndarray, H: np.ndarray
    ) -> np.ndarray:
        flux = np.einsum("ab...,b...->a...", conv_G, self.mu_gradient(H))
        if conv_grad.ndim < H.ndim + 1:
            conv_grad = broadcast_vector(conv_grad, H.ndim + 1)
        flux = flux - H[None] * conv_grad
        return v_divergence(flux, self.grid)

    def operator_A_species(self, g: np.ndarray) -> np.ndarray:
        """(2 / sqrt(mu)) Q(mu, sqrt(mu) g) for one species."""
        grad = self.half_gradient(g)
        flux = np.einsum("ab...,b...->a...", self.sigma, grad)
        return -2.0 * self.half_gradient_adjoint(flux)

    def operator_K_species(self, s: np.ndarray) -> np.ndarray:
        """(1 / sqrt(mu)) Q(sqrt(mu) s, mu) for one scalar field s."""
        grad = self.half_gradient(s)
        conv = self.kernel.convolve_vector(self.sqrt_mu * grad)
        return self.half_gradient_adjoint(self.sqrt_mu * conv)

    def operator_A(self, g: PairLike) -> PairLike:
        values = _pair_values(g, self.grid)
        out = np.stack(
            [self.operator_A_species(values[..., s, :, :, :]) for s in range(2)], axis=-4
        )
        return _like(g, self._guard(out, "A g"), self.grid)

    def operator_K(self, g: PairLike) -> PairLike:
        values = _pair_values(g, self.grid)
        k = self.operator_K_species(values[..., 0, :, :, :] + values[..., 1, :, :, :])
        out = np.stack([k, k], axis=-4)
        return _like(g, self._guard(out, "K g"), self.grid)

    def linearized_L(self, g: PairLike) -> PairLike:
        """L = -A - K, i.e. -(1/sqrt(mu)) [2 Q(mu, sqrt(mu) g_s) + Q(sqrt(mu)(g_+ + g_-), mu)]."""
        values = _pair_values(g, self.grid)
        a = np.stack(
            [self.operator_A_species(values[..., s, :, :, :]) for s in range(2)], axis=-4
        )
        k = self.operator_K_species(values[..., 0, :, :, :] + values[..., 1, :, :, :])
        out = -a - k[..., None, :, :, :]
        return _like(g, self._guard(out, "L g"), self.grid)

    def linearized_L_from_collide(self, g: PairLike) -> np.ndarray:
        """Literal assembly of L from Q; agrees with linearized_L to roundoff."""
        values = _pair_values(g, self.grid)
        total = self.sqrt_mu * (values[..., 0, :, :, :] + values[..., 1, :, :, :])
        mu = np.broadcast_to(self.mu, total.shape)
        cross = self.collide(total, mu)
        out = np.stack(
            [
                -(2.0 * self.collide(mu, self.sqrt_mu * values[..., s, :, :, :]) + cross)
                / self.sqrt_mu
                for s in range(2)
            ],
            axis=-4,
        )
        return self._guard(out, "L g")

    def projected_L(self, g: PairLike) -> PairLike:
        """(I - P) L (I - P): annihilates the discrete null space exactly."""
        micro = self.projector.micro(_pair_values(g, self.grid))
        out = self.projector.micro(self.linearized_L(micro))
        return _like(g, out, self.grid)

    def gamma_nonlinear(self, g: PairLike, h: PairLike) -> PairLike:
        """Gamma_s(g, h) = Q(sqrt(mu)(g_+ + g_-), sqrt(mu) h_s) / sqrt(mu)."""
        g_values = _pair_values(g, self.grid)
        h_values = _pair_values(h, self.grid)
        G = self.sqrt_mu * (g_values[..., 0, :, :, :] + g_values[..., 1, :, :, :])
        conv_G = self.kernel.convolve_tensor(G)
        conv_grad = self.kernel.convolve_vector(self.mu_gradient(G))
        out = np.stack(
            [
                self._collide_with(conv_G, conv_grad, self.sqrt_mu * h_values[..., s, :, :, :])
                / self.sqrt_mu
                for s in range(2)
            ],
            axis=-4,
        )
        return _like(g, self._guard(out, "Gamma(g, h)"), self.grid)

    # dense assembly

    def _species_columns(self, apply, chunk: int = 64) -> np.ndarray:
        size = self.grid.size
        out = np.empty((size, size))
        for start in range(0, size, chunk):
            stop = min(start + chunk, size)
            unit = np.zeros((stop - start, size))
            unit[np.arange(stop - start), np.arange(start, stop)] = 1.0
            result = apply(unit.reshape((stop - start,) + self.grid.shape))
            out[:, start:stop] = result.reshape(stop - start, size).T
        return out

    def dense_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense single-species A and K matrices of size n^3."""
        logger.debug(f"Assembling dense collision blocks for {self.grid.size} nodes")
        a = self._species_columns(self.operator_A_species)
        k = self._species_columns(self.operator_K_species)
        return a, k

    def dense_L(self) -> np.ndarray:
        a, k = self.dense_blocks()
        diagonal = -a - k
        return np.block([[diagonal, -k], [-k, diagonal]])

    def dense_projected_L(self, dense: Optional[np.ndarray] = None) -> np.ndarray:
        dense = self.dense_L() if dense is None else dense
        complement = np.eye(dense.shape[0]) - self.projector.matrix()
        return complement @ dense @ complement


@lru_cache(maxsize=8)
def _operator(grid: VelocityGrid, delta_reg: float) -> CollisionOperator:
    return CollisionOperator(grid, delta_reg)


def get_operator(grid: VelocityGrid, delta_reg: Optional[float] = None) -> CollisionOperator:
    return _operator(grid, settings.DELTA_REG if delta_reg is None else float(delta_reg))


def collide(G, H, grid: VelocityGrid) -> np.ndarray:
    for operand in (G, H):
        if isinstance(operand, VelocityField):
            grid.check_same(operand.grid)
    return get_operator(grid).collide(G, H)


def operator_A(g: PairLike, grid: VelocityGrid) -> PairLike:
    return get_operator(grid).operator_A(g)


def operator_K(g: PairLike, grid: VelocityGrid) -> PairLike:
    return get_operator(grid).operator_K(g)


def linearized_L(g: PairLike, grid: VelocityGrid) -> PairLike:
    return get_operator(grid).linearized_L(g)


def gamma_nonlinear(g: PairLike, h: PairLike, grid: VelocityGrid) -> PairLike:
    return get_operator(grid).gamma_nonlinear(g, h)
