import numpy as np
import pytest

from config import settings
from core_apps.collision.cache import cache_path, load_or_build, read_matrix
from core_apps.collision.coercivity import (
    coercivity_estimate,
    galerkin_basis,
    null_space_residuals,
)
from core_apps.collision.models import SpeciesPair
from core_apps.collision.operators import (
    CollisionOperator,
    build_kernel_table,
    collide,
    get_operator,
    landau_kernel,
    self_cell_constant,
)
from core_apps.common.errors import GridError, GridMismatchError, SolverError
from core_apps.macro_micro.utils import get_projector, null_space_basis
from core_apps.velocity_space.models import VelocityField, VelocityGrid, WeightSpec
from core_apps.velocity_space.utils import (
    maxwellian,
    random_smooth_field,
    sqrt_maxwellian,
    weighted_lp_norm,
)


@pytest.fixture(scope="module")
def coarse():
    return get_operator(VelocityGrid(v_max=5.0, n_per_axis=8))


@pytest.fixture(scope="module")
def medium():
    return get_operator(VelocityGrid(v_max=5.0, n_per_axis=12))


def _random_pair(grid, seed):
    rng = np.random.default_rng(seed)
    return np.stack([random_smooth_field(grid, rng, degree=3) for _ in range(2)])


class TestLandauKernel:
    """Pointwise kernel Phi(v)."""

    def test_axis_vector(self):
        np.testing.assert_allclose(landau_kernel([1.0, 0.0, 0.0]), np.diag([0.0, 1.0, 1.0]))

    def test_annihilates_its_argument(self):
        rng = np.random.default_rng(0)
        for v in rng.standard_normal((100, 3)):
            np.testing.assert_allclose(landau_kernel(v) @ v, 0.0, atol=1e-12)

    def test_trace_and_spectrum(self):
        v = np.array([0.3, -1.2, 2.0])
        r = np.linalg.norm(v)
        phi = landau_kernel(v)
        assert np.trace(phi) == pytest.approx(2.0 / r)
        np.testing.assert_allclose(np.linalg.eigvalsh(phi), [0.0, 1 / r, 1 / r], atol=1e-12)

    def test_origin_is_rejected(self):
        with pytest.raises(ValueError):
            landau_kernel(np.zeros(3))


class TestKernelTable:
    """Difference-lattice table and its convolutions."""

    def test_self_cell_constant(self):
        closed_form = 3.0 * (np.log(2.0 + np.sqrt(3.0)) - np.pi / 6.0)
        assert self_cell_constant() == pytest.approx(closed_form, rel=1e-10)

    def test_table_matches_pointwise_kernel(self):
        grid = VelocityGrid(v_max=4.0, n_per_axis=8)
        table = build_kernel_table(grid)
        offset = (2, -1, 3)
        expected = landau_kernel(np.array(offset) * grid.h)
        np.testing.assert_allclose(table.matrix_at(offset), expected, rtol=1e-14)
        np.testing.assert_allclose(
            table.matrix_at((0, 0, 0)), table.self_cell * np.eye(3), rtol=1e-14
        )

    def test_homogeneity_under_doubled_cutoff(self):
        small = build_kernel_table(VelocityGrid(v_max=3.0, n_per_axis=8))
        large = build_kernel_table(VelocityGrid(v_max=6.0, n_per_axis=8))
        np.testing.assert_allclose(large.components, 0.5 * small.components, rtol=1e-13)

    @pytest.mark.parametrize("delta_reg", [0.0, -0.5, 1.5])
    def test_rejects_regularization_out_of_range(self, delta_reg):
        with pytest.raises(GridError):
            build_kernel_table(VelocityGrid(v_max=4.0, n_per_axis=8), delta_reg)

    def test_fft_matches_direct_sum(self, coarse):
        values = np.random.default_rng(4).standard_normal(coarse.grid.shape)
        fast = coarse.kernel.convolve_tensor(values)
        direct = coarse.kernel.convolve_direct(values)
        scale = np.abs(direct).max()
        assert np.abs(fast - direct).max() <= 1e-10 * scale

    def test_vector_convolution_contracts_tensor(self, coarse):
        vector = np.random.default_rng(5).standard_normal((3,) + coarse.grid.shape)
        expected = sum(
            coarse.kernel.convolve_tensor(vector[b])[:, b] for b in range(3)
        )
        np.testing.assert_allclose(
            coarse.kernel.convolve_vector(vector), expected, atol=1e-12 * np.abs(expected).max()
        )

    def test_complex_input_is_linear(self, coarse):
        rng = np.random.default_rng(6)
        re, im = rng.standard_normal((2,) + coarse.grid.shape)
        out = coarse.kernel.convolve_tensor(re + 1j * im)
        np.testing.assert_allclose(out.real, coarse.kernel.convolve_tensor(re))
        np.testing.assert_allclose(out.imag, coarse.kernel.convolve_tensor(im))


class TestCollide:
    """Bilinear operator Q(G, H)."""

    def test_maxwellian_equilibrium(self, medium):
        mu = maxwellian(medium.grid)
        residual = weighted_lp_norm(medium.collide(mu, mu), medium.grid)
        assert residual <= 1e-10 * weighted_lp_norm(mu, medium.grid)

    def test_mass_conservation(self, medium):
        grid = medium.grid
        G, H = np.abs(_random_pair(grid, 7))
        out = medium.collide(G, H)
        assert abs(grid.integrate(out)) <= 1e-10 * grid.integrate(np.abs(out))

    def test_momentum_and_energy_of_self_collision(self, medium):
        grid = medium.grid
        v = grid.mesh
        bump = np.exp(-np.sum((v - np.array([1.0, -0.5, 0.3])[:, None, None, None]) ** 2, axis=0))
        F = maxwellian(grid) * (1.0 + 0.1 * bump)
        out = medium.collide(F, F)
        assert np.abs(grid.integrate(v * out)).max() <= 1e-3
        assert abs(grid.integrate(grid.speed_squared * out)) <= 1e-3
        # the discrete flux form makes both exact up to roundoff
        assert np.abs(grid.integrate(v * out)).max() <= 1e-10

    def test_grid_mismatch(self):
        a = VelocityGrid(v_max=5.0, n_per_axis=8)
        b = VelocityGrid(v_max=4.0, n_per_axis=8)
        G = VelocityField(values=maxwellian(a), grid=a)
        H = VelocityField(values=maxwellian(b), grid=b)
        with pytest.raises(GridMismatchError):
            collide(G, H, a)


class TestLinearizedOperator:
    """A, K, L and their structure."""

    def test_A_of_zero(self, coarse):
        zero = SpeciesPair.zero(coarse.grid)
        out = coarse.operator_A(zero)
        assert isinstance(out, SpeciesPair)
        assert np.all(out.values == 0.0)

    def test_assembly_identity(self, coarse):
        g = _random_pair(coarse.grid, 8)
        direct = coarse.linearized_L(g)
        np.testing.assert_allclose(direct, -coarse.operator_A(g) - coarse.operator_K(g))
        literal = coarse.linearized_L_from_collide(g)
        # dividing by sqrt(mu) amplifies roundoff in the far corners
        core = coarse.grid.speed <= 3.0
        difference = np.abs(literal - direct)[:, core]
        assert difference.max() <= 1e-8 * np.abs(direct).max()

    def test_K_keeps_rapid_decay(self, medium):
        grid = medium.grid
        pair = np.stack([sqrt_maxwellian(grid)] * 2)
        out = medium.operator_K(pair)
        assert np.isfinite(weighted_lp_norm(out, grid, 2, WeightSpec(ell=4.0)))

    @pytest.mark.parametrize("n", [12, 24])
    def test_null_space(self, n):
        residuals = null_space_residuals(VelocityGrid(v_max=5.0, n_per_axis=n))
        assert residuals.max() <= 5e-2
        # exact on this discretization, so refinement has nothing left to gain
        assert residuals.max() <= 1e-8, f"null-space residuals {residuals}"

    def test_nonnegative_on_random_pairs(self, medium):
        grid = medium.grid
        rng = np.random.default_rng(9)
        for _ in range(50):
            g = np.stack([random_smooth_field(grid, rng) for _ in range(2)])
            quadratic = np.sum(g * medium.linearized_L(g)) * grid.weight
            assert quadratic >= -1e-10 * np.sum(g * g) * grid.weight

    def test_dense_blocks_are_symmetric(self, medium):
        a, k = medium.dense_blocks()
        for block in (a, k):
            assert np.abs(block - block.T).max() <= 1e-8 * np.abs(block).max()

    def test_dense_L_matches_operator(self, coarse):
        dense = coarse.dense_L()
        g = _random_pair(coarse.grid, 10)
        np.testing.assert_allclose(
            dense @ g.ravel(),
            coarse.linearized_L(g).ravel(),
            atol=1e-10 * np.abs(dense).max(),
        )

    def test_dense_L_is_positive_semidefinite(self, coarse):
        dense = coarse.dense_L()
        eigenvalues = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        assert eigenvalues.min() >= -1e-9 * eigenvalues.max()

    def test_projected_L_kills_null_space_exactly(self, coarse):
        basis = null_space_basis(coarse.grid)
        np.testing.assert_allclose(coarse.projected_L(basis), 0.0, atol=1e-12)

    def test_overflow_guard(self, coarse, monkeypatch):
        monkeypatch.setattr(settings, "OVERFLOW_CAP", 1e-30)
        with pytest.raises(SolverError):
            coarse.linearized_L(_random_pair(coarse.grid, 11))


class TestGamma:
    """Nonlinear collision term."""

    def test_vanishes_on_maxwellian_pair(self, medium):
        root = sqrt_maxwellian(medium.grid)
        pair = np.stack([root, root])
        out = medium.gamma_nonlinear(pair, pair)
        assert np.abs(out).max() <= 1e-10 * np.abs(root).max()

    def test_bilinear(self, coarse):
        g, h = _random_pair(coarse.grid, 12), _random_pair(coarse.grid, 13)
        np.testing.assert_allclose(
            coarse.gamma_nonlinear(2.0 * g, h), 2.0 * coarse.gamma_nonlinear(g, h), rtol=1e-12
        )

    def test_range_is_microscopic(self, medium):
        grid = medium.grid
        projector = get_projector(grid)
        g, h = _random_pair(grid, 14), _random_pair(grid, 15)
        scale = np.sqrt(np.sum(medium.gamma_nonlinear(g, g) ** 2) * grid.weight)
        moments = projector.moments(medium.gamma_nonlinear(g, g))
        assert np.abs(moments).max() <= 1e-10 * scale
        symmetric = medium.gamma_nonlinear(g, h) + medium.gamma_nonlinear(h, g)
        assert np.abs(projector.moments(symmetric)).max() <= 1e-10 * scale
        # per-species mass vanishes for any pairing
        mixed = projector.moments(medium.gamma_nonlinear(g, h))
        assert np.abs(mixed[:2]).max() <= 1e-10 * scale


class TestDenseCache:
    """Binary cache of dense matrices."""

    def test_round_trip_is_bit_identical(self, coarse, tmp_path):
        built = load_or_build(
            "L", coarse.grid, coarse.delta_reg, coarse.dense_L, root=tmp_path
        )
        path = cache_path("L", coarse.grid, coarse.delta_reg, tmp_path)
        assert path.exists()
        loaded = load_or_build(
            "L", coarse.grid, coarse.delta_reg, lambda: pytest.fail("rebuilt"), root=tmp_path
        )
        assert np.array_equal(built, loaded)
        assert np.array_equal(built, coarse.dense_L())

    def test_header_mismatch_is_rejected(self, coarse, tmp_path):
        load_or_build("L", coarse.grid, coarse.delta_reg, coarse.dense_L, root=tmp_path)
        path = cache_path("L", coarse.grid, coarse.delta_reg, tmp_path)
        with pytest.raises(SolverError):
            read_matrix(path, "L", coarse.grid, 0.25)


class TestCoercivity:
    """Spectral-gap estimate on the micro subspace."""

    def test_galerkin_basis_size(self):
        grid = VelocityGrid(v_max=4.0, n_per_axis=8)
        assert galerkin_basis(grid, 3).shape == (40, 2) + grid.shape

    def test_positive_estimate(self):
        report = coercivity_estimate(VelocityGrid(v_max=4.0, n_per_axis=12), samples=10)
        assert report.lambda_0 > 0.0
        assert report.sampled_minimum > 0.0
        assert report.basis_size == 34
        assert report.samples_used + report.samples_skipped == 10

    def test_null_space_samples_are_skipped(self):
        grid = VelocityGrid(v_max=4.0, n_per_axis=8)
        operator = get_operator(grid)
        micro = operator.projector.micro(null_space_basis(grid)[2])
        assert np.abs(micro).max() <= 1e-12

    def test_weighted_variant_reported(self):
        report = coercivity_estimate(
            VelocityGrid(v_max=4.0, n_per_axis=8), ell=1.0, samples=5, degree=2
        )
        assert report.weighted_minimum is not None

    @pytest.mark.slow
    def test_stable_under_refinement(self):
        coarse = coercivity_estimate(VelocityGrid(v_max=4.0, n_per_axis=12), samples=5)
        fine = coercivity_estimate(VelocityGrid(v_max=4.0, n_per_axis=16), samples=5)
        assert abs(fine.lambda_0 - coarse.lambda_0) <= 0.2 * coarse.lambda_0


def test_operator_is_cached():
    grid = VelocityGrid(v_max=5.0, n_per_axis=8)
    assert get_operator(grid) is get_operator(grid, settings.DELTA_REG)
    assert isinstance(get_operator(grid), CollisionOperator)
