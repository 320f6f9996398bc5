import numpy as np
import pytest

from core_apps.common.errors import FrequencyError, NeutralityError
from core_apps.field.models import SlabGeometry
from core_apps.field.utils import (
    ModeDerivative,
    SlabDerivative,
    phi_time_derivative,
    slab_field_energy,
    slab_field_energy_from_modes,
    slab_phi_time_derivative,
    solve_poisson,
    solve_poisson_slab,
)


class TestSolvePoisson:
    """Per-frequency Poisson coupling."""

    def test_unit_frequency(self):
        state = solve_poisson(1.0, [1.0, 0.0, 0.0])
        assert state.phi_hat == pytest.approx(1.0)
        np.testing.assert_allclose(state.E_hat, [-1j, 0.0, 0.0])

    def test_zero_charge(self):
        state = solve_poisson(0.0, [0.3, -0.2, 1.0])
        assert state.phi_hat == 0.0
        np.testing.assert_allclose(state.E_hat, 0.0)

    def test_energy_term(self):
        state = solve_poisson(1.0, [2.0, 0.0, 0.0])
        assert state.phi_hat == pytest.approx(0.25)
        assert state.energy_term() == pytest.approx(0.5)

    def test_field_parallel_to_frequency(self):
        k = np.array([0.4, -1.1, 0.7])
        state = solve_poisson(0.3 + 0.2j, k)
        np.testing.assert_allclose(np.cross(state.E_hat, k), 0.0, atol=1e-15)
        assert state.k_squared * state.phi_hat == pytest.approx(0.3 + 0.2j)

    def test_neutral_zero_mode(self):
        assert solve_poisson(0.0, np.zeros(3)).phi_hat == 0.0
        with pytest.raises(NeutralityError):
            solve_poisson(1e-3, np.zeros(3))

    def test_vectorized_frequencies(self):
        k = np.stack([np.array([0.0, 1.0, 2.0]), np.zeros(3), np.zeros(3)])
        state = solve_poisson(np.array([0.0, 1.0, 1.0]), k)
        np.testing.assert_allclose(state.phi_hat, [0.0, 1.0, 0.25])


class TestPhiTimeDerivative:
    def test_current_orthogonal_to_k(self):
        assert phi_time_derivative([0.0, 1.0, 0.0], [1.0, 0.0, 0.0]) == 0.0

    def test_parallel_current(self):
        assert phi_time_derivative([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == pytest.approx(-1j)

    def test_zero_frequency_rejected(self):
        with pytest.raises(FrequencyError):
            phi_time_derivative([1.0, 0.0, 0.0], np.zeros(3))

    def test_bad_shape_rejected(self):
        with pytest.raises(FrequencyError):
            solve_poisson(1.0, [1.0, 0.0])


class TestSlab:
    """Periodic slab Poisson solver and derivatives."""

    def test_single_harmonic(self):
        geometry = SlabGeometry(n_x=16, length=2 * np.pi)
        rho = np.cos(geometry.x)
        phi, field = solve_poisson_slab(rho, geometry)
        np.testing.assert_allclose(phi, np.cos(geometry.x), atol=1e-12)
        np.testing.assert_allclose(field, np.sin(geometry.x), atol=1e-12)

    def test_non_neutral_rejected(self):
        geometry = SlabGeometry(n_x=8, length=1.0)
        with pytest.raises(NeutralityError):
            solve_poisson_slab(np.ones(8), geometry)

    def test_parseval(self):
        geometry = SlabGeometry(n_x=16, length=4 * np.pi)
        rho = np.sin(2 * np.pi * geometry.x / geometry.length) + 0.3 * np.cos(
            6 * np.pi * geometry.x / geometry.length
        )
        phi, field = solve_poisson_slab(rho, geometry)
        assert slab_field_energy(field, geometry) == pytest.approx(
            slab_field_energy_from_modes(phi, geometry), rel=1e-12
        )

    def test_spectral_derivative(self):
        geometry = SlabGeometry(n_x=12, length=2 * np.pi)
        derivative = SlabDerivative(geometry)
        values = np.sin(2 * geometry.x)
        np.testing.assert_allclose(
            derivative.partial(values, 0), 2 * np.cos(2 * geometry.x), atol=1e-12
        )
        np.testing.assert_allclose(derivative.partial(values, 2), 0.0)

    def test_phi_t_from_continuity(self):
        geometry = SlabGeometry(n_x=16, length=2 * np.pi)
        # rho_t = -j' ; with j = sin(x), rho_t = -cos(x) and phi_t solves -phi_t'' = rho_t
        phi_t = slab_phi_time_derivative(np.sin(geometry.x), geometry)
        np.testing.assert_allclose(phi_t, -np.cos(geometry.x), atol=1e-12)


class TestModeDerivative:
    def test_divergence(self):
        derivative = ModeDerivative([1.0, 2.0, 0.0])
        vector = np.array([1.0, 1.0, 5.0])
        assert derivative.divergence(vector) == pytest.approx(3j)
