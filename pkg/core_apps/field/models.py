from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from config import settings
from core_apps.common.errors import GridError
from core_apps.common.models import SerializableModel


@dataclass(frozen=True, eq=False)
class FieldState(SerializableModel):
    """Potential and field of one or more frequencies; k has its component axis first."""

    phi_hat: np.ndarray
    k: np.ndarray

    @property
    def E_hat(self) -> np.ndarray:
        return -1j * self.k * self.phi_hat

    @property
    def k_squared(self) -> np.ndarray:
        return np.sum(self.k * self.k, axis=0)

    def energy_term(self) -> np.ndarray:
        """2 |k|^2 |phi_hat|^2, the field part of the base energy."""
        return 2.0 * self.k_squared * np.abs(self.phi_hat) ** 2


@dataclass(frozen=True)
class SlabGeometry:
    """Periodic interval [0, length) in x_1 with n_x cells; x_2, x_3 are homogeneous."""

    n_x: int = field(default_factory=lambda: settings.SLAB_N_X)
    length: float = field(default_factory=lambda: settings.SLAB_LENGTH)

    def __post_init__(self) -> None:
        if self.n_x < 2:
            raise GridError(f"n_x must be at least 2, got {self.n_x}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise GridError(f"Slab length must be positive, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.n_x

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) * self.dx

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_x, d=self.dx)

    @cached_property
    def derivative_wavenumbers(self) -> np.ndarray:
        """Wavenumbers for odd derivatives: the Nyquist mode of an even grid is dropped."""
        k = self.wavenumbers.copy()
        if self.n_x % 2 == 0:
            k[self.n_x // 2] = 0.0
        return k

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Rectangle rule over the trailing spatial axis (spectrally exact for periodic data)."""
        return np.sum(values, axis=-1) * self.dx
