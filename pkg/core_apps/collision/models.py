from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft

from core_apps.common.errors import GridMismatchError
from core_apps.velocity_space.models import VelocityField, VelocityGrid

# storage order of the six independent entries of a symmetric 3x3 tensor
COMPONENTS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
SPATIAL_AXES = (-3, -2, -1)


def component_index(a: int, b: int) -> int:
    return COMPONENTS.index((min(a, b), max(a, b)))


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Landau kernel sampled on the difference lattice m h, m in [-(n-1), n-1]^3.

    components[c][m + n - 1] holds entry COMPONENTS[c] of Phi(m h). Immutable
    once built; the FFT spectra are computed on first use.
    """

    grid: VelocityGrid
    delta_reg: float
    self_cell: float
    components: np.ndarray

    def __post_init__(self) -> None:
        side = 2 * self.grid.n_per_axis - 1
        if self.components.shape != (6, side, side, side):
            raise GridMismatchError(
                f"Kernel table shape {self.components.shape} does not match {self.grid}"
            )
        self.components.setflags(write=False)

    def matrix_at(self, offset: tuple[int, int, int]) -> np.ndarray:
        """Phi at the lattice offset (m1, m2, m3), as a 3x3 matrix."""
        n = self.grid.n_per_axis
        index = tuple(m + n - 1 for m in offset)
        out = np.empty((3, 3))
        for c, (a, b) in enumerate(COMPONENTS):
            out[a, b] = out[b, a] = self.components[(c,) + index]
        return out

    @cached_property
    def padded_length(self) -> int:
        return fft.next_fast_len(2 * self.grid.n_per_axis - 1, real=True)

    @cached_property
    def spectra(self) -> np.ndarray:
        size = (self.padded_length,) * 3
        return fft.rfftn(self.components, s=size, axes=SPATIAL_AXES)

    def _forward(self, values: np.ndarray) -> np.ndarray:
        return fft.rfftn(values, s=(self.padded_length,) * 3, axes=SPATIAL_AXES)

    def _backward(self, spectrum: np.ndarray) -> np.ndarray:
        n = self.grid.n_per_axis
        out = fft.irfftn(spectrum, s=(self.padded_length,) * 3, axes=SPATIAL_AXES)
        window = slice(n - 1, 2 * n - 1)
        return out[..., window, window, window] * self.grid.weight

    def convolve_tensor(self, values: np.ndarray) -> np.ndarray:
        """(Phi * G)_ab for a scalar field G of shape (..., n, n, n); result (3, 3, ...)."""
        if np.iscomplexobj(values):
            return self.convolve_tensor(values.real) + 1j * self.convolve_tensor(
                values.imag
            )
        spectrum = self._forward(values)
        out = np.empty((3, 3) + values.shape)
        for c, (a, b) in enumerate(COMPONENTS):
            out[a, b] = self._backward(self.spectra[c] * spectrum)
            out[b, a] = out[a, b]
        return out

    def convolve_vector(self, vector: np.ndarray) -> np.ndarray:
        """sum_b Phi_ab * V_b for V of shape (3, ..., n, n, n)."""
        if np.iscomplexobj(vector):
            return self.convolve_vector(vector.real) + 1j * self.convolve_vector(
                vector.imag
            )
        spectra = [self._forward(vector[b]) for b in range(3)]
        return np.stack(
            [
                self._backward(
                    sum(self.spectra[component_index(a, b)] * spectra[b] for b in range(3))
                )
                for a in range(3)
            ]
        )

    def convolve_direct(self, values: np.ndarray) -> np.ndarray:
        """Reference double sum for convolve_tensor; O(N^2) memory, coarse grids only."""
        n = self.grid.n_per_axis
        index = np.indices(self.grid.shape).reshape(3, -1)
        offsets = index[:, :, None] - index[:, None, :] + n - 1
        flat = values.reshape(values.shape[:-3] + (-1,))
        out = np.empty((3, 3) + values.shape, dtype=np.result_type(values, float))
        for c, (a, b) in enumerate(COMPONENTS):
            phi = self.components[c][offsets[0], offsets[1], offsets[2]]
            conv = flat @ phi.T * self.grid.weight
            out[a, b] = out[b, a] = conv.reshape(values.shape)
        return out


@dataclass(frozen=True, eq=False)
class SpeciesPair:
    """g = [g_+, g_-] at one spatial site."""

    plus: VelocityField
    minus: VelocityField

    def __post_init__(self) -> None:
        self.plus.grid.check_same(self.minus.grid)

    @property
    def grid(self) -> VelocityGrid:
        return self.plus.grid

    @property
    def values(self) -> np.ndarray:
        return np.stack([self.plus.values, self.minus.values])

    @classmethod
    def from_array(cls, values: np.ndarray, grid: VelocityGrid) -> "SpeciesPair":
        if values.shape != (2,) + grid.shape:
            raise GridMismatchError(
                f"Pair shape {values.shape} does not match {(2,) + grid.shape}"
            )
        return cls(
            plus=VelocityField(values=values[0], grid=grid, species="+"),
            minus=VelocityField(values=values[1], grid=grid, species="-"),
        )

    @classmethod
    def zero(cls, grid: VelocityGrid) -> "SpeciesPair":
        return cls.from_array(np.zeros((2,) + grid.shape), grid)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)
