import numpy as np
import pytest

from core_apps.common.errors import GridError, WeightError
from core_apps.velocity_space.models import VelocityField, VelocityGrid, WeightSpec
from core_apps.velocity_space.utils import (
    boundary_mask,
    maxwellian,
    nested_v_derivative,
    pv_project,
    radial_quadrature,
    sigma_components,
    sigma_norm,
    sqrt_maxwellian,
    v_divergence,
    v_gradient,
    weighted_lp_norm,
)

MU0 = (2.0 * np.pi) ** -1.5


def _gaussian(r: float, power: float = 0.0) -> float:
    return MU0 * np.exp(-0.5 * r * r) * (1.0 + r * r) ** power


class TestVelocityGrid:
    """Lattice construction and validation."""

    @pytest.mark.parametrize("n", [6, 7, 9, 13])
    def test_rejects_small_or_odd_axis(self, n):
        with pytest.raises(GridError):
            VelocityGrid(v_max=6.0, n_per_axis=n)

    def test_rejects_nonpositive_cutoff(self):
        with pytest.raises(GridError):
            VelocityGrid(v_max=0.0, n_per_axis=8)

    def test_no_node_at_origin(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=12)
        assert grid.speed.min() == pytest.approx(np.sqrt(3) * grid.h / 2)

    def test_nodes_symmetric(self):
        grid = VelocityGrid(v_max=5.0, n_per_axis=10)
        assert np.array_equal(grid.nodes, -grid.nodes[::-1])

    def test_velocity_field_rejects_non_finite(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=8)
        values = np.zeros(grid.shape)
        values[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            VelocityField(values=values, grid=grid)


class TestMaxwellian:
    """Normalized Maxwellian on the lattice."""

    def test_value_near_origin(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=32)
        mu = maxwellian(grid)
        assert abs(mu.max() - MU0) <= grid.h**2 * MU0

    def test_even_symmetry(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=16)
        mu = maxwellian(grid)
        assert np.array_equal(mu, mu[::-1, ::-1, ::-1])

    def test_unit_mass(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=32)
        assert abs(grid.integrate(maxwellian(grid)) - 1.0) <= 1e-6


class TestWeightedNorms:
    """Weighted L^p norms and weight validation."""

    def test_zero_weight_is_plain_l2(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=16)
        f = np.random.default_rng(3).standard_normal(grid.shape)
        plain = np.sqrt(np.sum(f * f) * grid.weight)
        assert weighted_lp_norm(f, grid, 2, WeightSpec(ell=0.0)) == pytest.approx(plain)

    def test_sqrt_maxwellian_unit_norm(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=32)
        norm = weighted_lp_norm(sqrt_maxwellian(grid), grid, 2)
        assert abs(norm**2 - 1.0) <= 1e-6

    def test_weighted_norm_matches_radial_oracle(self):
        grid = VelocityGrid(v_max=8.0, n_per_axis=32)
        norm = weighted_lp_norm(sqrt_maxwellian(grid), grid, 2, WeightSpec(ell=4.0))
        oracle = radial_quadrature(lambda r: _gaussian(r, power=4.0))
        assert norm**2 == pytest.approx(oracle, rel=1e-4)

    def test_norm_monotone_in_ell(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=12)
        f = np.abs(np.random.default_rng(5).standard_normal(grid.shape))
        norms = [weighted_lp_norm(f, grid, 2, WeightSpec(ell=e)) for e in (-2, 0, 1, 3)]
        assert norms == sorted(norms)

    def test_invalid_p(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=8)
        with pytest.raises(WeightError):
            weighted_lp_norm(np.ones(grid.shape), grid, 3)

    def test_derivative_weight_needs_enough_ell(self):
        with pytest.raises(WeightError):
            WeightSpec(ell=1.0, alpha_order=1, beta_order=1)
        assert WeightSpec(ell=3.0, alpha_order=1, beta_order=1).exponent == 2.0


class TestVelocityGradient:
    """Second-order finite differences in velocity."""

    def test_constant_has_zero_gradient(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=10)
        grad = v_gradient(np.full(grid.shape, 2.5), grid)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_linear_is_exact(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=10)
        f = 2.0 * grid.mesh[0] - 3.0 * grid.mesh[2] + 1.0
        grad = v_gradient(f, grid)
        np.testing.assert_allclose(grad[0], 2.0, atol=1e-12)
        np.testing.assert_allclose(grad[1], 0.0, atol=1e-12)
        np.testing.assert_allclose(grad[2], -3.0, atol=1e-12)

    def test_second_order_convergence(self):
        errors = []
        for n in (24, 48):
            grid = VelocityGrid(v_max=6.0, n_per_axis=n)
            mu = maxwellian(grid)
            error = v_gradient(mu, grid) + grid.mesh * mu
            errors.append(np.abs(error[:, 1:-1, 1:-1, 1:-1]).max())
        ratio = errors[0] / errors[1]
        assert 3.5 <= ratio <= 4.5, f"convergence ratio {ratio}"

    def test_flux_divergence_sums_to_zero(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=10)
        flux = np.random.default_rng(11).standard_normal((3,) + grid.shape)
        assert abs(grid.integrate(v_divergence(flux, grid))) <= 1e-10

    def test_flux_stencil_matches_central_inside(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=12)
        f = np.sin(grid.mesh[0]) * np.cos(grid.mesh[1])
        central = v_gradient(f, grid)
        flux = v_gradient(f, grid, stencil="flux")
        inner = (slice(None), slice(3, -3), slice(3, -3), slice(3, -3))
        np.testing.assert_allclose(flux[inner], central[inner], atol=1e-12)

    def test_nested_derivative_of_quadratic(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=10)
        f = grid.mesh[0] ** 2 * grid.mesh[1]
        np.testing.assert_allclose(nested_v_derivative(f, grid, (2, 1, 0)), 2.0, atol=1e-9)


class TestSigmaNorm:
    """The anisotropic dissipation norm."""

    def test_zero(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=10)
        assert sigma_norm(np.zeros(grid.shape), grid) == 0.0

    def test_radial_field_has_small_angular_part(self):
        ratios = []
        for n in (16, 32):
            grid = VelocityGrid(v_max=6.0, n_per_axis=n)
            _, radial, angular = sigma_components(sqrt_maxwellian(grid), grid)
            ratios.append(
                weighted_lp_norm(angular, grid) / weighted_lp_norm(radial, grid)
            )
        assert ratios[1] < ratios[0]
        assert ratios[1] < 0.05

    def test_matches_radial_oracle_after_extrapolation(self):
        values = []
        for n in (48, 96):
            grid = VelocityGrid(v_max=5.0, n_per_axis=n)
            values.append(sigma_norm(sqrt_maxwellian(grid), grid))
        extrapolated = (4.0 * values[1] - values[0]) / 3.0
        zeroth = radial_quadrature(lambda r: _gaussian(r, power=-0.5))
        radial = radial_quadrature(lambda r: 0.25 * r * r * _gaussian(r, power=-1.5))
        oracle = np.sqrt(zeroth) + np.sqrt(radial)
        assert extrapolated == pytest.approx(oracle, rel=1e-3)


class TestProjectionPv:
    """Node-wise projection onto the v direction."""

    def test_identity_on_v(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=8)
        np.testing.assert_allclose(pv_project(grid.mesh, grid), grid.mesh, atol=1e-12)

    def test_kills_orthogonal_fields(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=8)
        v = grid.mesh
        rotated = np.stack([-v[1], v[0], np.zeros_like(v[0])])
        np.testing.assert_allclose(pv_project(rotated, grid), 0.0, atol=1e-12)

    def test_idempotent_and_pythagorean(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=8)
        g = np.random.default_rng(2).standard_normal((3,) + grid.shape)
        once = pv_project(g, grid)
        np.testing.assert_allclose(pv_project(once, grid), once, atol=1e-12)
        total = np.sum(g * g)
        split = np.sum(once * once) + np.sum((g - once) ** 2)
        assert split == pytest.approx(total, rel=1e-12)


class TestBoundaryMask:
    def test_layer_count(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=10)
        assert boundary_mask(grid, layers=2).sum() == 6**3
