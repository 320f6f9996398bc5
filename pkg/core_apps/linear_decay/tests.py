import numpy as np
import pytest

from config import settings
from core_apps.collision.operators import get_operator
from core_apps.common.errors import (
    ConfigError,
    GridError,
    GridMismatchError,
    LyapunovConfigError,
    MicroscopicSourceError,
)
from core_apps.linear_decay.lyapunov import (
    ModeMoments,
    base_dissipation_fraction,
    equivalence_bounds,
    equivalent_norm,
    fit_bound,
    fit_dissipation,
    kappa_search,
    lyapunov_interactive_1,
    lyapunov_interactive_2,
    lyapunov_total,
    macro_dissipation,
    random_mode_state,
    verify_mode_inequality,
    weighted_inequalities,
)
from core_apps.linear_decay.mode import (
    ModeGenerator,
    evolve_mode,
    mode_rhs,
    velocity_profile,
)
from core_apps.linear_decay.models import (
    DecayReport,
    LyapunovConfig,
    ModeState,
    ModeTrajectory,
    ShellSpec,
    ShellSweep,
)
from core_apps.linear_decay.synthesis import (
    L2_CRITICAL_DELTA,
    critical_power,
    data_amplitude,
    default_family,
    rate_exponent,
    squared_target,
    surcharge_comparison,
    synthesize_from_sweep,
    synthesize_whole_space_decay,
)
from core_apps.linear_decay.tasks import ShellJob, evolve_shell
from core_apps.macro_micro.utils import get_projector, null_space_basis, species_moment
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import sqrt_maxwellian

GRID = VelocityGrid(v_max=4.0, n_per_axis=8)
UNWEIGHTED = LyapunovConfig(kappa1=0.1, kappa2=0.01, kappa3=0.1)


@pytest.fixture(scope="module")
def dense_L():
    return get_operator(GRID).dense_L()


def _generator(k_norm, dense_L):
    return ModeGenerator(GRID, [k_norm, 0.0, 0.0], dense_L=dense_L)


def _state(k_norm, values=None):
    values = velocity_profile(GRID) if values is None else values
    return ModeState(f_hat=values, k=np.array([k_norm, 0.0, 0.0]), grid=GRID)


def _micro_heavy(k_norm, seed=1):
    state = random_mode_state(GRID, k_norm, np.random.default_rng(seed))
    return state.with_values(get_projector(GRID).micro(state.f_hat))


def _evolve(state, dense_L, horizon=4.0, dt=0.1, **options):
    generator = _generator(state.k_norm, dense_L)
    return evolve_mode(state, horizon, dt, generator=generator, **options)


class TestModeRhs:
    """Right side of the per-mode linear system."""

    def test_zero_state(self):
        state = _state(0.5, np.zeros((2,) + GRID.shape))
        assert np.all(mode_rhs(state) == 0.0)

    def test_null_space_is_stationary_at_k_zero(self):
        basis = null_space_basis(GRID)
        state = _state(0.0, basis[0] + basis[1] + 0.5 * basis[2] + basis[5])
        assert np.abs(mode_rhs(state)).max() <= 1e-7

    def test_generator_matches_rhs(self, dense_L):
        state = _micro_heavy(0.7)
        generator = _generator(0.7, dense_L)
        np.testing.assert_allclose(
            -generator.apply(state.f_hat), mode_rhs(state), atol=1e-10
        )

    def test_macro_source_rejected(self):
        source = null_space_basis(GRID)[0].astype(complex)
        with pytest.raises(MicroscopicSourceError):
            mode_rhs(_state(0.5), g_hat=source)

    def test_poisson_slaving(self):
        state = _micro_heavy(0.3)
        root = sqrt_maxwellian(GRID)
        density = species_moment(state.f_hat, root, GRID)
        assert 0.09 * state.phi_hat == pytest.approx(density[0] - density[1], abs=1e-12)

    def test_shape_checked(self):
        with pytest.raises(GridMismatchError):
            ModeState(f_hat=np.zeros((1,) + GRID.shape), k=np.zeros(3), grid=GRID)


class TestEvolveMode:
    """Backward Euler and split steppers."""

    def test_null_space_trajectory_is_constant(self, dense_L):
        basis = null_space_basis(GRID)
        state = _state(0.0, basis[0] + basis[1] + basis[3])
        traj = _evolve(state, dense_L, horizon=1.0)
        assert np.abs(traj.f_hat - state.f_hat).max() <= 1e-7

    @pytest.mark.parametrize("k_norm", [0.1, 1.0, 2.0])
    def test_base_energy_is_non_increasing(self, dense_L, k_norm):
        traj = _evolve(_micro_heavy(k_norm), dense_L)
        assert base_dissipation_fraction(traj) == 1.0

    def test_first_order_refinement(self, dense_L):
        state = _state(0.5)
        ends = [
            _evolve(state, dense_L, horizon=1.0, dt=dt).final.f_hat
            for dt in (0.1, 0.05, 0.025)
        ]
        ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
        assert 1.7 <= ratio <= 2.3, f"refinement ratio {ratio:.3f}"

    def test_split_scheme_converges_to_implicit(self, dense_L):
        state = _state(0.5)
        gaps = []
        for dt in (0.1, 0.05):
            implicit = _evolve(state, dense_L, horizon=1.0, dt=dt).final.f_hat
            split = _evolve(state, dense_L, horizon=1.0, dt=dt, scheme="split").final.f_hat
            gaps.append(np.linalg.norm(implicit - split))
        assert gaps[1] < gaps[0]

    def test_neutrality_with_microscopic_source(self, dense_L):
        state = _state(0.0)
        source = get_projector(GRID).micro(_micro_heavy(0.0, seed=4).f_hat)
        traj = _evolve(state, dense_L, horizon=1.0, g_hat=source)
        root = sqrt_maxwellian(GRID)
        charges = [
            np.subtract(*species_moment(values, root, GRID)) for values in traj.f_hat
        ]
        np.testing.assert_allclose(charges, charges[0], atol=1e-8)

    def test_output_every(self, dense_L):
        traj = _evolve(_state(0.5), dense_L, horizon=1.0, dt=0.1, output_every=5)
        np.testing.assert_allclose(traj.times, [0.0, 0.5, 1.0])

    @pytest.mark.parametrize(
        "options",
        [{"dt": 0.0}, {"dt": 0.1, "scheme": "rk4"}, {"dt": 0.1, "output_every": 0}],
    )
    def test_bad_arguments(self, dense_L, options):
        with pytest.raises(GridError):
            _evolve(_state(0.5), dense_L, horizon=1.0, **options)

    def test_moment_trajectory_view(self, dense_L):
        traj = _evolve(_state(0.5), dense_L, horizon=0.5)
        view = traj.to_moment_trajectory()
        assert view.f.shape == (len(traj), 1, 2) + GRID.shape
        assert view.E.shape == (len(traj), 1, 3)


class TestLyapunovFunctionals:
    """Interactive functionals and the blended mode functional."""

    def test_zero_state(self):
        state = _state(1.0, np.zeros((2,) + GRID.shape))
        assert lyapunov_total(state, LyapunovConfig.from_settings()) == 0.0

    def test_second_functional_vanishes_for_even_real_state(self):
        root = sqrt_maxwellian(GRID)
        values = np.stack([root * (1.0 + GRID.speed_squared), 2.0 * root])
        assert abs(lyapunov_interactive_2(_state(0.8, values))) <= 1e-14

    def test_first_functional_on_macro_state(self):
        basis = null_space_basis(GRID)
        state = _state(0.5, basis[0] + 0.5 * basis[1] + basis[2])
        expected = 0.01 * (1j * 0.5 * 0.75) / 1.25
        value = lyapunov_interactive_1(state, kappa1=0.1, kappa2=0.01)
        assert value == pytest.approx(expected, abs=1e-10)

    def test_unweighted_blend(self):
        state = _micro_heavy(0.6)
        moments = ModeMoments.of(state)
        expected = state.base_energy + 0.1 * (
            lyapunov_interactive_1(state, 0.1, 0.01, moments)
            + lyapunov_interactive_2(state, moments)
        ).real
        assert lyapunov_total(state, UNWEIGHTED) == pytest.approx(expected, rel=1e-12)

    def test_weighted_branches(self):
        cfg = LyapunovConfig(kappa1=0.1, kappa2=0.01, kappa3=0.1, kappa4=0.05, ell=1.0)
        low = _micro_heavy(0.5)
        high = _micro_heavy(2.0)
        assert lyapunov_total(low, cfg) > lyapunov_total(low, UNWEIGHTED)
        # kappa5 = 0 leaves the high-frequency branch at the unweighted value
        assert lyapunov_total(high, cfg) == pytest.approx(lyapunov_total(high, UNWEIGHTED))

    def test_interactive_terms_are_controlled(self):
        rng = np.random.default_rng(5)
        ratios = []
        for index in range(100):
            state = random_mode_state(GRID, (0.1, 1.0, 3.0)[index % 3], rng)
            size = abs(lyapunov_interactive_1(state)) + abs(lyapunov_interactive_2(state))
            ratios.append(size / equivalent_norm(state))
        first, second = max(ratios[:50]), max(ratios[50:])
        assert np.isfinite(first) and 0.5 <= first / second <= 2.0

    def test_equivalence_bounds(self):
        low, high = equivalence_bounds(LyapunovConfig.from_settings(), GRID, samples=60)
        assert 0.0 < low <= high < np.inf

    def test_config_validation(self):
        with pytest.raises(LyapunovConfigError):
            LyapunovConfig(kappa1=0.1, kappa2=0.05, kappa3=0.1)
        with pytest.raises(LyapunovConfigError):
            LyapunovConfig(kappa1=0.2, kappa2=0.01, kappa3=0.1)
        with pytest.raises(LyapunovConfigError):
            LyapunovConfig(kappa1=0.1, kappa2=0.01, kappa3=0.1, kappa4=-1.0)

    def test_shifted_config(self):
        cfg = LyapunovConfig.from_settings()
        assert cfg.shifted(-1.0).ell == cfg.ell - 1.0
        assert cfg.shifted(-1.0).kappa3 == cfg.kappa3


class TestFits:
    """Fitted constants of differential inequalities."""

    def test_dissipation_constant(self):
        dissipation = np.ones(100)
        rate = -2.0 * dissipation
        rate[0] = -0.5
        fit = fit_dissipation("demo", rate, dissipation, k_norm=1.0)
        assert fit.constant == pytest.approx(2.0)
        assert fit.violations_at_half == 1
        assert fit.satisfied_fraction == pytest.approx(0.99)

    def test_zero_series_gives_infinite_constant(self):
        fit = fit_dissipation("demo", np.zeros(20), np.zeros(20), k_norm=1.0)
        assert np.isinf(fit.constant)

    def test_negative_constant_is_clamped(self):
        fit = fit_dissipation("demo", np.ones(20), np.ones(20), k_norm=1.0)
        assert fit.constant == 0.0

    def test_bound_constant(self):
        rhs = np.ones(200)
        lhs = 3.0 * rhs
        lhs[:2] = 10.0
        fit = fit_bound("demo", lhs, rhs, k_norm=1.0)
        assert fit.constant == pytest.approx(3.0)
        assert not fit.larger_is_better

    def test_rate_scales_with_frequency(self):
        fit = fit_dissipation("demo", -np.ones(20), np.ones(20), k_norm=0.5)
        assert fit.rate == pytest.approx(0.25)


class TestModeInequality:
    """Time-frequency Lyapunov inequality along trajectories."""

    def test_zero_trajectory(self):
        zeros = np.zeros((12, 2) + GRID.shape, dtype=complex)
        traj = ModeTrajectory(np.arange(12.0), zeros, np.array([1.0, 0.0, 0.0]), GRID)
        fit = verify_mode_inequality(traj, UNWEIGHTED)
        assert np.isinf(fit.constant)

    def test_too_few_samples(self, dense_L):
        traj = _evolve(_micro_heavy(1.0), dense_L, horizon=0.5, dt=0.1)
        with pytest.raises(GridError):
            verify_mode_inequality(traj, UNWEIGHTED)

    def test_positive_constant_for_micro_heavy_data(self, dense_L):
        traj = _evolve(_micro_heavy(1.0), dense_L, horizon=2.0, dt=0.1)
        fit = verify_mode_inequality(traj, UNWEIGHTED)
        assert fit.constant > 0.0
        assert fit.satisfied_fraction >= 0.99

    def test_weighted_inequalities(self, dense_L):
        traj = _evolve(_micro_heavy(0.5), dense_L, horizon=2.0, dt=0.1)
        fits = weighted_inequalities(traj, ell=1.0)
        assert set(fits) == {"weighted_micro", "weighted_full"}
        for fit in fits.values():
            assert 0.0 <= fit.constant < np.inf
            assert fit.satisfied_fraction >= 0.99

    def test_macro_dissipation(self, dense_L):
        traj = _evolve(_micro_heavy(0.5), dense_L, horizon=2.0, dt=0.1)
        fit = macro_dissipation(traj, UNWEIGHTED)
        assert 0.0 <= fit.constant < np.inf

    @pytest.mark.slow
    def test_small_frequency_regime(self, dense_L):
        rates = {}
        for k_norm in (0.1, 0.2):
            traj = _evolve(_state(k_norm), dense_L, horizon=200.0, dt=1.0)
            rates[k_norm] = verify_mode_inequality(traj, UNWEIGHTED).rate
        assert rates[0.1] > 0.0
        assert 0.125 <= rates[0.1] / rates[0.2] <= 0.5

    @pytest.mark.slow
    def test_kappa_search(self, dense_L):
        trajectories = [
            _evolve(_micro_heavy(k), dense_L, horizon=3.0, dt=0.1) for k in (0.5, 1.0)
        ]
        cfg, value = kappa_search(trajectories, kappa1_grid=(0.1,), probe_samples=20)
        assert value > 0.0
        assert cfg.kappa2 == pytest.approx(cfg.kappa1 / 10.0)


def _synthetic_sweep(count=48, profile="gaussian"):
    shells = ShellSpec(count=count, k_min=1e-2, k_max=10.0)
    times = np.concatenate([[0.0], np.logspace(0.0, 3.0, 121)])
    energies = np.exp(-np.outer(shells.radii**2, times))
    return ShellSweep(
        radii=shells.radii,
        widths=shells.widths,
        times=times,
        energies=energies,
        profile=profile,
    )


class TestSynthesis:
    """Whole-space decay rates from shell quadrature."""

    def test_rate_exponents(self):
        assert rate_exponent(1, 0) == pytest.approx(0.75)
        assert rate_exponent(2, 0) == pytest.approx(0.0)
        assert rate_exponent(1, 1) == pytest.approx(1.25)
        assert squared_target(1, 0) == pytest.approx(-1.5)
        assert squared_target(1, 1) == pytest.approx(-2.5)

    def test_data_families(self):
        with pytest.raises(ConfigError):
            data_amplitude("l2_critical", 1)
        with pytest.raises(ConfigError):
            data_amplitude("uniform", 1)
        with pytest.raises(ConfigError):
            rate_exponent(3, 0)

    def test_fractional_r(self):
        assert rate_exponent(1.5, 0) == pytest.approx(0.25)
        assert squared_target(1.5, 1) == pytest.approx(-1.5)
        assert default_family(1.5) == "zr_critical"
        assert critical_power(2) == pytest.approx(-1.5 + L2_CRITICAL_DELTA)
        assert critical_power(1) == pytest.approx(L2_CRITICAL_DELTA)
        with pytest.raises(ConfigError):
            rate_exponent(0.9, 0)

    def test_zr_critical_sweep_is_just_slower_than_target(self):
        report = synthesize_from_sweep(_synthetic_sweep(), m=0, r=1.5)
        assert report.exponents["family"] == "zr_critical"
        expected = squared_target(1.5, 0) - L2_CRITICAL_DELTA
        assert report.exponents["slope"] == pytest.approx(expected, abs=0.05)

    def test_shell_spec(self):
        shells = ShellSpec(count=8, k_min=0.1, k_max=10.0)
        edges = shells.edges
        assert np.all((shells.radii > edges[:-1]) & (shells.radii < edges[1:]))
        assert shells.widths.sum() == pytest.approx(9.9)
        with pytest.raises(GridError):
            ShellSpec(count=8, k_min=1.0, k_max=0.5)

    @pytest.mark.parametrize("m, target", [(0, -1.5), (1, -2.5)])
    def test_heat_kernel_sweep(self, m, target):
        report = synthesize_from_sweep(_synthetic_sweep(), m=m, r=1)
        assert report.exponents["slope"] == pytest.approx(target, abs=0.05)
        assert report.flags == ()

    def test_l2_critical_sweep_barely_decays(self):
        report = synthesize_from_sweep(_synthetic_sweep(), m=0, r=2)
        assert -0.1 < report.exponents["slope"] <= 0.0

    def test_report_rows(self):
        report = synthesize_from_sweep(_synthetic_sweep(), m=0, r=1)
        rows = report.rows()
        assert len(rows) == len(report.times)
        assert rows[0][1] == "synth"
        assert report.contributions.shape == (48, len(report.times))

    def test_unresolved_inner_shells_flagged(self):
        sweep = _synthetic_sweep(count=4)
        report = synthesize_from_sweep(sweep, m=0, r=1)
        assert "inner_shells_unresolved" in report.flags

    def test_surcharge_comparison(self):
        summary = surcharge_comparison(
            _synthetic_sweep(), _synthetic_sweep(profile="algebraic")
        )
        assert summary["difference"] == pytest.approx(0.0, abs=1e-12)
        assert summary["target"] == -1.5

    def test_decay_report_times_must_increase(self):
        with pytest.raises(GridError):
            DecayReport(times=np.array([1.0, 0.5]), values=np.ones(2))

    def test_shell_task(self, monkeypatch, tmp_path):
        monkeypatch.setattr(settings, "CACHE_DIR", tmp_path)
        job = ShellJob(
            k_norm=0.5, n_per_axis=8, v_max=4.0, delta_reg=0.5, horizon=1.0, dt=0.5
        )
        times, energies = evolve_shell(job)
        np.testing.assert_allclose(times, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(energies)) and energies[-1] < energies[0]

    @pytest.mark.slow
    def test_whole_space_rate(self, monkeypatch, tmp_path):
        monkeypatch.setattr(settings, "CACHE_DIR", tmp_path)
        report = synthesize_whole_space_decay(m=0, r=1, workers=1)
        assert report.exponents["slope"] == pytest.approx(-1.5, abs=0.15)
