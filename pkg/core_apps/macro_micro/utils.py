from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import linalg

from core_apps.common.errors import GridMismatchError, MicroscopicSourceError
from core_apps.macro_micro.models import CompatibilityDefect, HighMoments, MacroFields
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import ArrayLike, as_array, sqrt_maxwellian

NULL_SPACE_LABELS = ("a_plus", "a_minus", "b1", "b2", "b3", "c")


def null_space_basis(grid: VelocityGrid) -> np.ndarray:
    """The six generators of the collision-invariant space, shape (6, 2, n, n, n)."""
    root = sqrt_maxwellian(grid)
    v = grid.mesh
    zero = np.zeros(grid.shape)
    rows = [
        (root, zero),
        (zero, root),
        *((v[i] * root, v[i] * root) for i in range(3)),
        ((grid.speed_squared - 3.0) * root, (grid.speed_squared - 3.0) * root),
    ]
    return np.stack([np.stack(row) for row in rows])


def species_moment(f: ArrayLike, psi: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """<psi, f_s> per species without conjugation; shape (2, ...) with spatial axes last."""
    values = as_array(f)
    moments = np.tensordot(values, psi, axes=([-3, -2, -1], [0, 1, 2])) * grid.weight
    return np.moveaxis(moments, -1, 0)


def _check_pair(values: np.ndarray, grid: VelocityGrid) -> None:
    if values.ndim < 4 or values.shape[-4:] != (2,) + grid.shape:
        raise GridMismatchError(
            f"Expected a species pair ending with {(2,) + grid.shape}, got {values.shape}"
        )


class MacroProjector:
    """Orthogonal projection P onto span(null_space_basis) in the midpoint inner product.

    The discrete generators are not exactly orthogonal, so coefficients come from
    a Gram solve; P is then exactly idempotent and self-adjoint on the grid.
    """

    def __init__(self, grid: VelocityGrid) -> None:
        self.grid = grid
        self.basis = null_space_basis(grid)
        self._flat = self.basis.reshape(6, -1)
        self.gram = self._flat @ self._flat.T * grid.weight
        self.gram_inverse = linalg.inv(self.gram)

    def moments(self, f: ArrayLike) -> np.ndarray:
        values = as_array(f)
        _check_pair(values, self.grid)
        lead = values.shape[:-4]
        flat = values.reshape(lead + (-1,))
        raw = flat @ self._flat.T * self.grid.weight
        return np.moveaxis(raw, -1, 0)

    def coefficients(self, f: ArrayLike) -> np.ndarray:
        """Shape (6, ...): a_plus, a_minus, b_1..3, c."""
        return np.tensordot(self.gram_inverse, self.moments(f), axes=1)

    def reconstruct(self, coefficients: np.ndarray) -> np.ndarray:
        return np.tensordot(np.moveaxis(coefficients, 0, -1), self.basis, axes=1)

    def project(self, f: ArrayLike) -> np.ndarray:
        return self.reconstruct(self.coefficients(f))

    def micro(self, f: ArrayLike) -> np.ndarray:
        return as_array(f) - self.project(f)

    def matrix(self) -> np.ndarray:
        """Dense P acting on flattened pairs of length 2 n^3."""
        return self._flat.T @ self.gram_inverse @ self._flat * self.grid.weight


@lru_cache(maxsize=8)
def get_projector(grid: VelocityGrid) -> MacroProjector:
    return MacroProjector(grid)


def project_P(f: ArrayLike, grid: VelocityGrid) -> tuple[MacroFields, np.ndarray]:
    projector = get_projector(grid)
    coefficients = projector.coefficients(f)
    return MacroFields.from_coefficients(coefficients), projector.reconstruct(coefficients)


def micro_part(f: ArrayLike, grid: VelocityGrid) -> np.ndarray:
    return get_projector(grid).micro(f)


def macro_fields(f: ArrayLike, grid: VelocityGrid) -> MacroFields:
    return MacroFields.from_coefficients(get_projector(grid).coefficients(f))


def theta_weights(grid: VelocityGrid, literal: bool = False) -> np.ndarray:
    """(v_i v_j - delta_ij) sqrt(mu), or (v_i v_j - 1) sqrt(mu) when literal; shape (3, 3, n, n, n)."""
    v = grid.mesh
    root = sqrt_maxwellian(grid)
    shift = np.ones((3, 3)) if literal else np.eye(3)
    return (v[:, None] * v[None, :] - shift[:, :, None, None, None]) * root


def lambda_weights(grid: VelocityGrid) -> np.ndarray:
    return 0.1 * (grid.speed_squared - 5.0) * grid.mesh * sqrt_maxwellian(grid)


def high_moments(f: ArrayLike, grid: VelocityGrid, literal: bool = False) -> HighMoments:
    values = as_array(f)
    _check_pair(values, grid)
    theta = theta_weights(grid, literal)
    lam = lambda_weights(grid)
    Theta = np.stack(
        [
            np.stack([species_moment(values, theta[i, j], grid) for j in range(3)])
            for i in range(3)
        ]
    )
    Lambda = np.stack([species_moment(values, lam[i], grid) for i in range(3)])
    # species axis first
    return HighMoments(Theta=np.moveaxis(Theta, 2, 0), Lambda=np.moveaxis(Lambda, 1, 0))


def difference_current(f: ArrayLike, grid: VelocityGrid) -> np.ndarray:
    """j = <v sqrt(mu), f_+ - f_->, shape (3, ...)."""
    root = sqrt_maxwellian(grid)
    values = as_array(f)
    currents = [species_moment(values, grid.mesh[i] * root, grid) for i in range(3)]
    return np.stack([current[0] - current[1] for current in currents])


def compatibility_defect(g: ArrayLike, grid: VelocityGrid) -> CompatibilityDefect:
    """Charge moment and the six null-space moments of a source, maximized over spatial sites."""
    values = as_array(g)
    charge = species_moment(values, sqrt_maxwellian(grid), grid)
    moments = get_projector(grid).moments(values)
    worst = np.abs(moments).reshape(6, -1).max(axis=1)
    return CompatibilityDefect(
        charge=float(np.max(np.abs(charge[0] - charge[1]))),
        moments=tuple(float(m) for m in worst),
    )


def check_microscopic(
    g: ArrayLike, grid: VelocityGrid, tol: Optional[float] = None
) -> CompatibilityDefect:
    """Raise MicroscopicSourceError unless P g vanishes relative to |g|."""
    values = as_array(g)
    defect = compatibility_defect(values, grid)
    scale = max(float(np.sqrt(np.sum(np.abs(values) ** 2) * grid.weight)), 1.0)
    limit = (tol if tol is not None else 1e-10) * scale
    if defect.worst > limit:
        raise MicroscopicSourceError(
            f"Source is not microscopic: largest moment {defect.worst:.3e} > {limit:.3e}"
        )
    return defect
