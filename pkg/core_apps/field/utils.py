from typing import Optional

import numpy as np

from core_apps.common.errors import FrequencyError, NeutralityError
from core_apps.field.models import FieldState, SlabGeometry

NEUTRALITY_TOL = 1e-10


def _as_frequency(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape[:1] != (3,):
        raise FrequencyError(f"Frequency must have three components first, got {k.shape}")
    return k


def solve_poisson(rho_hat, k, tol: Optional[float] = None) -> FieldState:
    """|k|^2 phi_hat = rho_hat; the k = 0 mode carries phi_hat = 0 and must be neutral."""
    k = _as_frequency(k)
    rho_hat = np.asarray(rho_hat, dtype=complex)
    k_squared = np.sum(k * k, axis=0)
    zero = k_squared == 0.0
    limit = NEUTRALITY_TOL if tol is None else tol
    if np.any(np.abs(np.where(zero, rho_hat, 0.0)) > limit):
        raise NeutralityError(
            f"Zero mode carries charge {np.max(np.abs(np.where(zero, rho_hat, 0.0))):.3e}"
        )
    phi_hat = np.where(zero, 0.0, rho_hat / np.where(zero, 1.0, k_squared))
    return FieldState(phi_hat=phi_hat, k=k)


def phi_time_derivative(j_hat, k) -> np.ndarray:
    """d/dt phi_hat = -(i k . j_hat) / |k|^2 from the continuity equation."""
    k = _as_frequency(k)
    k_squared = np.sum(k * k, axis=0)
    if np.any(k_squared == 0.0):
        raise FrequencyError("phi_t is undefined at k = 0")
    return -1j * np.sum(k * np.asarray(j_hat), axis=0) / k_squared


class ModeDerivative:
    """Spatial derivatives of a single Fourier mode: d/dx_i -> i k_i."""

    def __init__(self, k) -> None:
        self.k = _as_frequency(k)

    def partial(self, values: np.ndarray, axis: int) -> np.ndarray:
        return 1j * self.k[axis] * values

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return np.stack([self.partial(values, i) for i in range(3)])

    def divergence(self, vector: np.ndarray) -> np.ndarray:
        return sum(self.partial(vector[i], i) for i in range(3))


class SlabDerivative(ModeDerivative):
    """Spectral d/dx_1 along the trailing axis; the slab is homogeneous in x_2 and x_3."""

    def __init__(self, geometry: SlabGeometry) -> None:
        self.geometry = geometry
        self.k = np.stack(
            [geometry.wavenumbers, np.zeros(geometry.n_x), np.zeros(geometry.n_x)]
        )

    def partial(self, values: np.ndarray, axis: int) -> np.ndarray:
        if axis != 0:
            return np.zeros_like(values)
        spectrum = np.fft.fft(values, axis=-1)
        out = np.fft.ifft(1j * self.geometry.derivative_wavenumbers * spectrum, axis=-1)
        return out if np.iscomplexobj(values) else out.real


def solve_poisson_slab(
    rho: np.ndarray, geometry: SlabGeometry, tol: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Periodic -phi'' = rho along the trailing axis; returns (phi, E_1) with mean-free phi."""
    rho = np.asarray(rho, dtype=float)
    spectrum = np.fft.fft(rho, axis=-1) / geometry.n_x
    limit = NEUTRALITY_TOL if tol is None else tol
    if np.any(np.abs(spectrum[..., 0]) > limit):
        raise NeutralityError(f"Slab charge has mean {np.max(np.abs(spectrum[..., 0])):.3e}")
    k = geometry.wavenumbers
    k_squared = np.where(k == 0.0, 1.0, k * k)
    phi_hat = np.where(k == 0.0, 0.0, spectrum / k_squared)
    phi = np.fft.ifft(phi_hat * geometry.n_x, axis=-1).real
    gradient_hat = 1j * geometry.derivative_wavenumbers * phi_hat * geometry.n_x
    field = -np.fft.ifft(gradient_hat, axis=-1).real
    return phi, field


def slab_phi_time_derivative(j1: np.ndarray, geometry: SlabGeometry) -> np.ndarray:
    """phi_t on the slab from the x_1 current, zero mean."""
    k = geometry.derivative_wavenumbers
    spectrum = np.fft.fft(j1, axis=-1)
    k_squared = np.where(k == 0.0, 1.0, k * k)
    phi_t_hat = np.where(k == 0.0, 0.0, -1j * k * spectrum / k_squared)
    return np.fft.ifft(phi_t_hat, axis=-1).real


def slab_field_energy(field: np.ndarray, geometry: SlabGeometry) -> np.ndarray:
    """|grad phi|_2^2 over one period, from real-space values."""
    return geometry.integrate(field**2)


def slab_field_energy_from_modes(phi: np.ndarray, geometry: SlabGeometry) -> np.ndarray:
    """The same quantity via Parseval: (L / n_x^2) sum |k phi_hat|^2."""
    spectrum = np.fft.fft(phi, axis=-1)
    k = geometry.derivative_wavenumbers
    return geometry.length / geometry.n_x**2 * np.sum(np.abs(k * spectrum) ** 2, axis=-1)


def sup_norm(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if np.size(values) else 0.0
