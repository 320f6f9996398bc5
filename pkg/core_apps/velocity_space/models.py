from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from config import settings
from core_apps.common.errors import GridError, GridMismatchError, WeightError


@dataclass(frozen=True)
class VelocityGrid:
    """Cell-centered uniform lattice on [-v_max, v_max]^3 with midpoint weights."""

    v_max: float = field(default_factory=lambda: settings.V_MAX)
    n_per_axis: int = field(default_factory=lambda: settings.N_PER_AXIS)

    def __post_init__(self) -> None:
        if not np.isfinite(self.v_max) or self.v_max <= 0:
            raise GridError(f"v_max must be positive, got {self.v_max}")
        if self.n_per_axis < 8 or self.n_per_axis % 2:
            raise GridError(
                f"n_per_axis must be even and at least 8, got {self.n_per_axis}"
            )

    @property
    def h(self) -> float:
        return 2.0 * self.v_max / self.n_per_axis

    @property
    def weight(self) -> float:
        return self.h**3

    @property
    def shape(self) -> tuple[int, int, int]:
        n = self.n_per_axis
        return (n, n, n)

    @property
    def size(self) -> int:
        return self.n_per_axis**3

    @cached_property
    def nodes(self) -> np.ndarray:
        # half-integer multiples of h, so the lattice is exactly symmetric
        offsets = np.arange(self.n_per_axis) + 0.5 - self.n_per_axis / 2
        return offsets * self.h

    @cached_property
    def mesh(self) -> np.ndarray:
        """Node coordinates, shape (3, n, n, n)."""
        return np.stack(np.meshgrid(self.nodes, self.nodes, self.nodes, indexing="ij"))

    @cached_property
    def speed_squared(self) -> np.ndarray:
        return np.sum(self.mesh**2, axis=0)

    @cached_property
    def speed(self) -> np.ndarray:
        return np.sqrt(self.speed_squared)

    @cached_property
    def bracket(self) -> np.ndarray:
        """<v> = sqrt(1 + |v|^2)."""
        return np.sqrt(1.0 + self.speed_squared)

    @cached_property
    def unit(self) -> np.ndarray:
        return self.mesh / self.speed

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Midpoint quadrature over the three trailing velocity axes."""
        return np.sum(values, axis=(-3, -2, -1)) * self.weight

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        return self.integrate(f * np.conj(g))

    def check_same(self, other: "VelocityGrid") -> None:
        if self != other:
            raise GridMismatchError(f"Grid mismatch: {self} vs {other}")


@dataclass(frozen=True)
class WeightSpec:
    """Velocity weight: <v>^ell, or <v>^{2(ell - |alpha| - |beta|)} when orders are set."""

    ell: float = 0.0
    alpha_order: Optional[int] = None
    beta_order: Optional[int] = None

    def __post_init__(self) -> None:
        orders = (self.alpha_order, self.beta_order)
        if any(o is not None and o < 0 for o in orders):
            raise WeightError(f"Derivative orders must be nonnegative, got {orders}")
        if self.is_derivative_weight and self.ell < self.order:
            raise WeightError(
                f"w(alpha, beta) needs ell >= |alpha| + |beta|, got ell={self.ell}, "
                f"|alpha| + |beta| = {self.order}"
            )

    @property
    def is_derivative_weight(self) -> bool:
        return self.alpha_order is not None or self.beta_order is not None

    @property
    def order(self) -> int:
        return (self.alpha_order or 0) + (self.beta_order or 0)

    @property
    def exponent(self) -> float:
        if self.is_derivative_weight:
            return 2.0 * (self.ell - self.order)
        return float(self.ell)

    def values(self, grid: VelocityGrid) -> np.ndarray:
        if self.exponent == 0:
            return np.ones(grid.shape)
        return grid.bracket**self.exponent


@dataclass(frozen=True, eq=False)
class VelocityField:
    values: np.ndarray
    grid: VelocityGrid
    species: Optional[str] = None

    def __post_init__(self) -> None:
        if self.values.shape[-3:] != self.grid.shape:
            raise GridMismatchError(
                f"Field shape {self.values.shape} does not end with {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Velocity field contains non-finite values")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)
