import numpy as np
import pytest

from core_apps.collision.operators import get_operator
from core_apps.common.errors import GridError, GridMismatchError, MicroscopicSourceError
from core_apps.field.utils import ModeDerivative
from core_apps.macro_micro.residuals import (
    RESIDUAL_HEADER,
    MomentTrajectory,
    moment_residuals,
    write_residual_csv,
)
from core_apps.macro_micro.utils import (
    check_microscopic,
    compatibility_defect,
    difference_current,
    get_projector,
    high_moments,
    macro_fields,
    micro_part,
    null_space_basis,
    project_P,
    species_moment,
)
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import random_smooth_field, sqrt_maxwellian

FINE = VelocityGrid(v_max=6.0, n_per_axis=24)
COARSE = VelocityGrid(v_max=5.0, n_per_axis=12)
K = np.array([0.5, 0.0, 0.0])
Q1 = np.array([1.0, -1.0])[:, None, None, None]


def _random_pair(grid, seed):
    rng = np.random.default_rng(seed)
    return np.stack([random_smooth_field(grid, rng, degree=3) for _ in range(2)])


def _norm_squared(values, grid):
    return float(np.sum(np.abs(values) ** 2) * grid.weight)


class TestProjectP:
    """Projection onto the collision invariants."""

    def test_momentum_generator(self):
        root = sqrt_maxwellian(FINE)
        f = np.stack([FINE.mesh[0] * root] * 2)
        fields, Pf = project_P(f, FINE)
        np.testing.assert_allclose(fields.b, [1.0, 0.0, 0.0], atol=1e-12)
        assert abs(fields.a_plus) < 1e-12 and abs(fields.a_minus) < 1e-12
        assert abs(fields.c) < 1e-12
        np.testing.assert_allclose(Pf, f, atol=1e-12)

    def test_energy_generator(self):
        root = sqrt_maxwellian(FINE)
        f = np.stack([(FINE.speed_squared - 3.0) * root] * 2)
        fields = macro_fields(f, FINE)
        assert fields.c == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(fields.b, 0.0, atol=1e-12)

    def test_coefficients_match_defining_moments(self):
        f = _random_pair(FINE, 11)
        fields = macro_fields(f, FINE)
        root = sqrt_maxwellian(FINE)
        mass = species_moment(f, root, FINE)
        energy = species_moment(f, (FINE.speed_squared - 3.0) * root, FINE)
        assert fields.a_plus == pytest.approx(mass[0], abs=1e-6)
        assert fields.a_minus == pytest.approx(mass[1], abs=1e-6)
        assert fields.c == pytest.approx((energy[0] + energy[1]) / 12.0, abs=1e-5)

    def test_idempotent(self):
        f = _random_pair(COARSE, 3)
        projector = get_projector(COARSE)
        once = projector.coefficients(f)
        twice = projector.coefficients(projector.project(f))
        np.testing.assert_allclose(twice, once, atol=1e-12)

    def test_self_adjoint(self):
        f, g = _random_pair(COARSE, 4), _random_pair(COARSE, 5)
        projector = get_projector(COARSE)
        left = np.sum(projector.project(f) * g) * COARSE.weight
        right = np.sum(f * projector.project(g)) * COARSE.weight
        assert left == pytest.approx(right, rel=1e-12)

    def test_reconstruction_round_trip(self):
        f = _random_pair(COARSE, 6)
        fields, Pf = project_P(f, COARSE)
        projector = get_projector(COARSE)
        np.testing.assert_allclose(projector.reconstruct(fields.coefficients()), Pf)

    def test_charge_property(self):
        root = sqrt_maxwellian(FINE)
        fields = macro_fields(np.stack([root, -root]), FINE)
        assert fields.charge == pytest.approx(2.0, abs=1e-12)


class TestMicroPart:
    """The complement (I - P)."""

    def test_orthogonal_to_invariants(self):
        f = _random_pair(COARSE, 7)
        r = micro_part(f, COARSE)
        scale = np.sqrt(_norm_squared(f, COARSE))
        for psi in null_space_basis(COARSE):
            pairing = np.sum(psi * r) * COARSE.weight
            assert abs(pairing) <= 1e-10 * scale, f"pairing {pairing:.3e}"

    def test_annihilates_macro_part(self):
        f = _random_pair(COARSE, 8)
        _, Pf = project_P(f, COARSE)
        np.testing.assert_allclose(micro_part(Pf, COARSE), 0.0, atol=1e-12)

    def test_pythagoras(self):
        f = _random_pair(COARSE, 9)
        _, Pf = project_P(f, COARSE)
        total = _norm_squared(f, COARSE)
        split = _norm_squared(Pf, COARSE) + _norm_squared(f - Pf, COARSE)
        assert split == pytest.approx(total, rel=1e-10)

    def test_leading_axes_are_kept(self):
        f = np.stack([_random_pair(COARSE, s) for s in range(3)])
        r = micro_part(f, COARSE)
        np.testing.assert_allclose(r[1], micro_part(f[1], COARSE))

    def test_rejects_single_species(self):
        with pytest.raises(GridMismatchError):
            micro_part(np.zeros(COARSE.shape), COARSE)


class TestHighMoments:
    """Theta and Lambda moments."""

    def test_vanish_on_maxwellian(self):
        root = sqrt_maxwellian(FINE)
        moments = high_moments(np.stack([root, root]), FINE)
        np.testing.assert_allclose(moments.Theta, 0.0, atol=1e-6)
        np.testing.assert_allclose(moments.Lambda, 0.0, atol=1e-14)

    def test_lambda_of_momentum_generator(self):
        root = sqrt_maxwellian(FINE)
        moments = high_moments(np.stack([FINE.mesh[0] * root] * 2), FINE)
        np.testing.assert_allclose(moments.Lambda[:, 0], 0.0, atol=1e-5)

    def test_theta_is_symmetric(self):
        moments = high_moments(_random_pair(COARSE, 12), COARSE)
        np.testing.assert_allclose(moments.Theta, np.swapaxes(moments.Theta, 1, 2))

    def test_literal_form_shifts_off_diagonal(self):
        root = sqrt_maxwellian(FINE)
        moments = high_moments(np.stack([root, root]), FINE, literal=True)
        assert moments.Theta[0, 0, 1] == pytest.approx(-1.0, abs=1e-6)
        assert moments.Theta[0, 0, 0] == pytest.approx(0.0, abs=1e-6)

    def test_combined(self):
        moments = high_moments(_random_pair(COARSE, 13), COARSE)
        difference = moments.combined(-1)
        np.testing.assert_allclose(
            difference.Lambda[0], moments.Lambda[0] - moments.Lambda[1]
        )


class TestCompatibility:
    """Microscopic sources and the charge moment."""

    def test_micro_source_is_compatible(self):
        g = micro_part(_random_pair(COARSE, 14), COARSE)
        defect = check_microscopic(g, COARSE)
        assert defect.charge <= 1e-12
        assert defect.worst <= 1e-10

    def test_macro_source_is_rejected(self):
        root = sqrt_maxwellian(COARSE)
        with pytest.raises(MicroscopicSourceError):
            check_microscopic(np.stack([root, 0.0 * root]), COARSE)

    def test_defect_reports_each_moment(self):
        root = sqrt_maxwellian(FINE)
        defect = compatibility_defect(np.stack([root, -root]), FINE)
        assert defect.charge == pytest.approx(2.0, rel=1e-6)
        assert len(defect.moments) == 6

    def test_difference_current(self):
        root = sqrt_maxwellian(FINE)
        j = difference_current(np.stack([FINE.mesh[0] * root, -FINE.mesh[0] * root]), FINE)
        np.testing.assert_allclose(j, [2.0, 0.0, 0.0], atol=1e-6)


def _manufactured(operator, dt, t0=1.0):
    """Closed-form mode trajectory and the exact source that makes it a solution."""
    grid = operator.grid
    psi_a, psi_b = _random_pair(grid, 21), _random_pair(grid, 22)
    times = t0 + dt * np.arange(-1, 2)
    c, s = np.cos(times), np.sin(times)
    f = (c[:, None, None, None, None] * psi_a + s[:, None, None, None, None] * psi_b)
    f = f[:, None].astype(complex)
    f_t = (-s[:, None, None, None, None] * psi_a + c[:, None, None, None, None] * psi_b)[
        :, None
    ]

    root = sqrt_maxwellian(grid)
    density = species_moment(f, root, grid)
    phi = (density[0] - density[1]) / np.dot(K, K)
    E = np.moveaxis(-1j * K[:, None, None] * phi[None], 0, -1)

    k_dot_v = np.tensordot(K, grid.mesh, axes=1)
    g = (
        f_t
        + 1j * k_dot_v * f
        + 2j * phi[..., None, None, None, None] * k_dot_v * root * Q1
        + operator.linearized_L(f)
    )
    return MomentTrajectory(
        times=times, f=f, E=E, grid=grid, derivative=ModeDerivative(K), g=g
    )


class TestMomentResiduals:
    """Residuals of the moment equations along stored trajectories."""

    def test_zero_trajectory(self):
        operator = get_operator(COARSE)
        traj = MomentTrajectory(
            times=np.linspace(0.0, 1.0, 5),
            f=np.zeros((5, 1, 2) + COARSE.shape),
            E=np.zeros((5, 1, 3)),
            grid=COARSE,
            derivative=ModeDerivative(K),
        )
        report = moment_residuals(traj, operator)
        assert report.worst() == 0.0
        assert len(report.times) == 3
        assert {"m0+", "m1-", "m2ij+", "macro1", "macro2", "continuity"} <= set(
            report.residuals
        )

    def test_too_few_samples(self):
        with pytest.raises(GridError):
            MomentTrajectory(
                times=np.array([0.0, 1.0]),
                f=np.zeros((2, 1, 2) + COARSE.shape),
                E=np.zeros((2, 1, 3)),
                grid=COARSE,
                derivative=ModeDerivative(K),
            )

    def test_non_uniform_times(self):
        with pytest.raises(GridError):
            MomentTrajectory(
                times=np.array([0.0, 1.0, 3.0]),
                f=np.zeros((3, 1, 2) + COARSE.shape),
                E=np.zeros((3, 1, 3)),
                grid=COARSE,
                derivative=ModeDerivative(K),
            )

    def test_field_shape_is_checked(self):
        with pytest.raises(GridMismatchError):
            MomentTrajectory(
                times=np.linspace(0.0, 1.0, 3),
                f=np.zeros((3, 1, 2) + COARSE.shape),
                E=np.zeros((3, 2, 3)),
                grid=COARSE,
                derivative=ModeDerivative(K),
            )

    def test_manufactured_solution_converges(self):
        operator = get_operator(COARSE)
        coarse = moment_residuals(_manufactured(operator, 0.1), operator)
        fine = moment_residuals(_manufactured(operator, 0.05), operator)

        # these three carry the source moments themselves, which do not vanish here
        skipped = {"continuity", "compatibility", "m2ij_source"}
        checked = 0
        for name, values in coarse.residuals.items():
            if name in skipped or values[0] < 1e-8:
                continue
            ratio = values[0] / fine.residuals[name][0]
            assert ratio >= 2.0, f"{name}: ratio {ratio:.2f}"
            checked += 1
        assert checked >= 10

        for name, values in coarse.weighted.items():
            if values[0] < 1e-8:
                continue
            ratio = values[0] / fine.weighted[name][0]
            assert ratio >= 2.0, f"{name} (weighted): ratio {ratio:.2f}"

    def test_csv_output(self, tmp_path):
        operator = get_operator(COARSE)
        report = moment_residuals(_manufactured(operator, 0.1), operator)
        target = write_residual_csv(report, tmp_path / "residuals.csv")
        lines = target.read_text().splitlines()
        assert lines[0] == ",".join(RESIDUAL_HEADER)
        assert len(lines) == 1 + len(report.residuals) * len(report.times)
        assert "nan" in target.read_text()
