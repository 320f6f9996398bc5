import itertools
import json

import numpy as np
import pytest
from scipy import sparse

from core_apps.collision.operators import get_operator
from core_apps.common.errors import (
    ConfigError,
    GridError,
    GridMismatchError,
    LyapunovConfigError,
    PositivityError,
    SolverError,
    WeightError,
)
from core_apps.field.models import SlabGeometry
from core_apps.macro_micro.residuals import moment_residuals
from core_apps.macro_micro.utils import get_projector
from core_apps.nonlinear_sim.energy import (
    energy_functionals,
    ledger_entries,
    random_slab_state,
    zeta_equivalence_bounds,
    zeta_functionals,
)
from core_apps.nonlinear_sim.equations import (
    nonlinear_source,
    perturbation_rhs,
    v1_force_derivative,
)
from core_apps.nonlinear_sim.inequalities import energy_inequality_residuals
from core_apps.nonlinear_sim.models import EnergyLedger, SimState, SlabGrid
from core_apps.nonlinear_sim.scenarios import Scenario, build_initial_state
from core_apps.nonlinear_sim.snapshots import read_snapshot, write_snapshot
from core_apps.nonlinear_sim.stepping import ImexStepper, diffusion_matrix, iterate_step, simulate
from core_apps.nonlinear_sim.tasks import run_scenario, source_size_rescaling
from core_apps.velocity_space.models import VelocityGrid, WeightSpec
from core_apps.velocity_space.utils import (
    boundary_mask,
    maxwellian,
    nested_v_derivative,
    radial_quadrature,
    random_smooth_field,
    sigma_norm_squared,
    sqrt_maxwellian,
)

SLAB = SlabGrid.build(n_x=4, length=4.0 * np.pi, n_per_axis=8, v_max=4.0)


@pytest.fixture(scope="module")
def operator():
    return get_operator(SLAB.velocity)


def _sinusoidal(epsilon=1e-3, grid=SLAB):
    return build_initial_state(grid, "sinusoidal", epsilon)


def _masses(f, grid=SLAB):
    return np.sum(SimState(f=f, grid=grid).densities, axis=1) * grid.geometry.dx


class TestSlabModels:
    def test_n_x_must_be_power_of_two(self):
        with pytest.raises(GridError):
            SlabGrid(geometry=SlabGeometry(n_x=6))

    def test_shape_is_checked(self):
        with pytest.raises(GridMismatchError):
            SimState(f=np.zeros((3, 2, 8, 8, 8)), grid=SLAB)

    def test_non_finite_state(self):
        f = np.zeros(SLAB.shape)
        f[0, 0, 0, 0, 0] = np.nan
        with pytest.raises(SolverError):
            SimState(f=f, grid=SLAB)

    def test_zero_state(self):
        state = SimState.zero(SLAB)
        np.testing.assert_allclose(state.E1, 0.0)
        mu = np.broadcast_to(maxwellian(SLAB.velocity), (4, 8, 8, 8))
        np.testing.assert_allclose(state.F[:, 0], mu)

    def test_poisson_is_solved(self):
        assert _sinusoidal().poisson_residual() <= 1e-12

    def test_x_derivative_of_a_wave(self):
        grid = SlabGrid.build(n_x=8, length=2.0 * np.pi, n_per_axis=8, v_max=4.0)
        out = grid.x_derivative(np.sin(grid.x))
        np.testing.assert_allclose(out, np.cos(grid.x), atol=1e-12)


class TestEnergyLedger:
    def test_negative_norm_is_rejected(self):
        ledger = EnergyLedger()
        with pytest.raises(SolverError):
            ledger.record(0.0, {"zeta": -1.0})

    def test_entries_must_not_change(self):
        ledger = EnergyLedger()
        ledger.record(0.0, {"zeta": 1.0})
        with pytest.raises(GridMismatchError):
            ledger.record(1.0, {"energy_3_3": 1.0})

    def test_running_sup(self):
        ledger = EnergyLedger()
        for t, zeta in [(0.0, 1.0), (1.0, 0.1), (2.0, 0.5)]:
            ledger.record(t, {"zeta": zeta})
        ledger.add_running_sup()
        sup = ledger.series("zeta_inf")
        assert np.all(np.diff(sup) >= 0.0)
        assert sup[-1] == pytest.approx(3.0**1.5 * 0.5)

    def test_missing_series(self):
        with pytest.raises(GridError):
            EnergyLedger().series("zeta")


class TestPerturbationRhs:
    def test_zero_state(self, operator):
        out = perturbation_rhs(SimState.zero(SLAB), operator)
        assert np.max(np.abs(out)) == 0.0

    def test_spatially_homogeneous(self, operator):
        rng = np.random.default_rng(3)
        profile = random_smooth_field(SLAB.velocity, rng, degree=2)
        f = 1e-3 * np.broadcast_to(np.stack([profile, profile]), SLAB.shape).copy()
        state = SimState(f=f, grid=SLAB)
        np.testing.assert_allclose(state.E1, 0.0, atol=1e-15)
        expected = operator.gamma_nonlinear(f, f) - operator.linearized_L(f)
        np.testing.assert_allclose(perturbation_rhs(state, operator), expected, atol=1e-14)

    def test_force_term_moves_no_mass(self):
        rng = np.random.default_rng(5)
        f = np.stack([random_smooth_field(SLAB.velocity, rng, degree=3) for _ in range(2)])
        out = v1_force_derivative(f, SLAB.velocity)
        root = sqrt_maxwellian(SLAB.velocity)
        moments = np.sum(root * out, axis=(1, 2, 3))
        assert np.max(np.abs(moments)) <= 1e-12 * np.abs(root * f).sum()

    def test_force_derivative_is_consistent(self):
        grid = VelocityGrid(v_max=6.0, n_per_axis=32)
        root = sqrt_maxwellian(grid)
        v1 = grid.mesh[0]
        out = v1_force_derivative(v1 * root, grid)
        interior = boundary_mask(grid, 3).astype(bool)
        exact = (1.0 - v1**2) * root
        assert np.max(np.abs(out - exact)[interior]) <= 0.05

    def test_source_conserves_species_mass(self, operator):
        state = _sinusoidal(1e-2)
        source = nonlinear_source(state, operator)
        masses = np.sum(SimState(f=source, grid=SLAB).densities, axis=1)
        assert np.max(np.abs(masses)) <= 1e-12


class TestImex:
    def test_zero_stays_zero(self, operator):
        traj = simulate(SimState.zero(SLAB), 0.2, 0.1, operator=operator, with_ledger=False)
        assert np.max(np.abs(traj.f)) == 0.0

    def test_mass_and_charge(self, operator):
        initial = _sinusoidal()
        traj = simulate(initial, 0.5, 0.05, operator=operator, output_every=5, with_ledger=False)
        start = _masses(initial.f)
        for values in traj.f:
            np.testing.assert_allclose(_masses(values), start, atol=1e-14)
            charge = SimState(f=values, grid=SLAB).charge
            assert abs(np.sum(charge)) * SLAB.geometry.dx <= 1e-14

    def test_matrix_shape_is_checked(self, operator):
        with pytest.raises(GridError):
            ImexStepper(SLAB, 0.1, operator, matrix=np.eye(3))

    def test_continuity_is_second_order(self, operator):
        initial = _sinusoidal()
        residuals = []
        for dt in (0.1, 0.05):
            traj = simulate(initial, 1.0, dt, operator=operator, with_ledger=False)
            sources = np.stack([nonlinear_source(state, operator) for state in traj.states()])
            report = moment_residuals(traj.to_moment_trajectory(sources), operator)
            residuals.append(report.summary()["continuity"]["max"])
        order = np.log2(residuals[0] / residuals[1])
        assert 1.7 <= order <= 2.3

    def test_horizon_must_be_multiple_of_dt(self, operator):
        with pytest.raises(GridError):
            simulate(SimState.zero(SLAB), 0.25, 0.1, operator=operator)

    def test_unknown_mode(self, operator):
        with pytest.raises(GridError):
            simulate(SimState.zero(SLAB), 0.2, 0.1, mode="explicit", operator=operator)


class TestIteration:
    def test_maxwellian_is_a_fixed_point(self, operator):
        F = SimState.zero(SLAB).F
        out = iterate_step(F, 0.1, SLAB, operator)
        assert np.max(np.abs(out - F)) <= 1e-9 * np.max(F)

    def test_preserves_positivity(self, operator):
        rng = np.random.default_rng(11)
        F = SimState.zero(SLAB).F * (1.0 + 0.5 * rng.uniform(-1.0, 1.0, SLAB.shape))
        out = iterate_step(F, 0.1, SLAB, operator)
        assert out.min() >= 0.0

    def test_rejects_negative_input(self, operator):
        F = SimState.zero(SLAB).F
        F[0, 0, 4, 4, 4] = -1.0
        with pytest.raises(PositivityError) as info:
            iterate_step(F, 0.1, SLAB, operator, t=0.3)
        assert info.value.min_value == -1.0

    def test_successive_iterates_contract(self, operator):
        F = _sinusoidal(1e-2).F
        differences = []
        for _ in range(2):
            following = iterate_step(F, 0.1, SLAB, operator)
            differences.append(np.sqrt(np.sum((following - F) ** 2)))
            F = following
        assert all(b <= a for a, b in zip(differences, differences[1:]))

    def test_diffusion_rows_are_monotone(self, operator):
        total = 2.0 * SimState.zero(SLAB).F[:, 0]
        matrix = diffusion_matrix(operator.kernel.convolve_tensor(total), SLAB.velocity.h)
        off = matrix - sparse.diags(matrix.diagonal())
        assert off.min() >= 0.0
        assert matrix.diagonal().max() <= 0.0

    def test_agrees_with_imex(self, operator):
        initial = _sinusoidal()
        imex = simulate(initial, 0.4, 0.05, operator=operator, with_ledger=False).final
        iteration = simulate(
            initial, 0.4, 0.05, mode="iteration", operator=operator, with_ledger=False
        ).final
        gap = np.max(np.abs(imex.densities - iteration.densities))
        assert gap <= 0.1 * np.max(np.abs(initial.densities))


class TestEnergyFunctionals:
    def test_zero_state(self):
        values = energy_functionals(SimState.zero(SLAB))
        assert all(value == 0.0 for value in values.values())

    def test_orders_are_checked(self):
        with pytest.raises(GridError):
            energy_functionals(SimState.zero(SLAB), m=4, l=4.0)
        with pytest.raises(WeightError):
            energy_functionals(SimState.zero(SLAB), m=3, l=2.0)

    def test_monotone_in_weight(self):
        state = _sinusoidal()
        low = energy_functionals(state, 2, 2.0)
        high = energy_functionals(state, 2, 3.0)
        assert high["energy"] >= low["energy"]
        assert high["dissipation"] >= low["dissipation"]

    def test_separable_profile(self):
        grid = SlabGrid.build(n_x=4, length=4.0 * np.pi, n_per_axis=12, v_max=6.0)
        epsilon, ell = 1e-3, 1.0
        state = build_initial_state(grid, "separable", epsilon)
        # m = 0 keeps only the weighted L2 norm of f and the field energy
        # sin^2 averages to 1/2 over the slab and both species carry the profile
        expected = epsilon**2 * grid.length * radial_quadrature(
            lambda r: (1.0 + r * r) ** (2.0 * ell)
            * r
            * r
            / 3.0
            * np.exp(-0.5 * r * r)
            * (2.0 * np.pi) ** -1.5
        )
        values = energy_functionals(state, 0, ell)
        field = grid.integrate(state.E1**2)
        assert values["energy"] - field == pytest.approx(expected, rel=1e-4)

    def test_dissipation_sums_with_micro_content(self):
        """Both dissipation rates assembled term by term on a state with a micro part."""
        state = random_slab_state(SLAB, np.random.default_rng(7))
        m, ell = 2, 2.0
        velocity = SLAB.velocity
        projector = get_projector(velocity)
        mask = boundary_mask(velocity, 2)
        dx = SLAB.geometry.dx

        derivatives = [state.f]
        for _ in range(m):
            derivatives.append(SLAB.x_derivative(derivatives[-1]))

        micro_terms = x_only_terms = macro_terms = 0.0
        for a, values in enumerate(derivatives):
            micro = projector.micro(values)
            x_only_terms += dx * sigma_norm_squared(
                micro, velocity, WeightSpec(ell=ell, alpha_order=a, beta_order=0)
            )
            for beta in itertools.product(range(m - a + 1), repeat=3):
                order = sum(beta)
                if order > m - a:
                    continue
                weight = WeightSpec(ell=ell, alpha_order=a, beta_order=order)
                if order == 0:
                    micro_terms += dx * sigma_norm_squared(micro, velocity, weight)
                else:
                    derivative = nested_v_derivative(micro, velocity, beta)
                    micro_terms += dx * sigma_norm_squared(derivative, velocity, weight, mask)
            if a >= 1:
                macro_terms += dx * velocity.weight * float(np.sum((values - micro) ** 2))

        field = SLAB.integrate(state.E1**2)
        values = energy_functionals(state, m, ell)
        assert values["dissipation"] == pytest.approx(field + micro_terms + macro_terms, rel=1e-10)
        assert values["dissipation_weightless"] == pytest.approx(
            field + x_only_terms + macro_terms, rel=1e-10
        )
        assert values["dissipation_weightless"] < values["dissipation"]

    def test_trajectory_gives_series(self, operator):
        traj = simulate(_sinusoidal(), 0.2, 0.1, operator=operator, with_ledger=False)
        values = energy_functionals(traj, 2, 2.0)
        assert values["energy"].shape == (3,)


class TestZeta:
    def test_split_sums_do_not_depend_on_time(self):
        state = _sinusoidal()
        early = zeta_functionals(state, t=0.5)
        late = zeta_functionals(state, t=50.0)
        assert early.zeta_low + early.zeta_high == pytest.approx(late.zeta_low + late.zeta_high)
        assert early.zeta == pytest.approx(late.zeta)

    def test_high_part_vanishes_late(self):
        state = _sinusoidal()
        bracket = float(SLAB.velocity.bracket.max())
        t = 2.0 * bracket ** (1.0 / 0.25)
        assert zeta_functionals(state, p_prime=0.25, t=t).zeta_high == 0.0

    def test_p_prime_range(self):
        with pytest.raises(GridError):
            zeta_functionals(SimState.zero(SLAB), p_prime=0.5)

    def test_equivalence_bounds(self):
        low, high = zeta_equivalence_bounds(SLAB, samples=5, seed=2)
        assert 0.0 < low <= high

    def test_rejects_bad_interactive_weights(self):
        with pytest.raises(LyapunovConfigError):
            zeta_functionals(_sinusoidal(), weights={"eta_interactive": (0.01,)})

    def test_ledger_entries_are_nonnegative(self, operator):
        entries = ledger_entries(random_slab_state(SLAB, np.random.default_rng(4)), operator)
        for name in ("energy_3_3", "dissipation_3_3", "zeta", "source_size", "field"):
            assert entries[name] >= 0.0
        assert abs(entries["total_charge"]) <= 1e-14


class TestInequalities:
    def test_zero_trajectory(self, operator):
        traj = simulate(SimState.zero(SLAB), 1.0, 0.1, operator=operator)
        report = energy_inequality_residuals(traj, operator)
        assert all(pattern == "holds" for pattern in report.sign_pattern.values())

    def test_needs_ledger(self, operator):
        traj = simulate(SimState.zero(SLAB), 1.0, 0.1, operator=operator, with_ledger=False)
        with pytest.raises(GridError):
            energy_inequality_residuals(traj, operator)

    def test_too_few_samples(self, operator):
        traj = simulate(SimState.zero(SLAB), 0.4, 0.1, operator=operator)
        with pytest.raises(GridError):
            energy_inequality_residuals(traj, operator)

    @pytest.mark.slow
    def test_small_data_run(self, operator):
        traj = simulate(_sinusoidal(), 4.0, 0.05, operator=operator, output_every=4)
        report = energy_inequality_residuals(traj, operator)
        assert report.sign_pattern["source_size"] == "holds"
        assert report.sign_pattern["zeta_decay.constant"] == "holds"
        assert np.all(traj.ledger.series("zeta") > 0.0)


class TestScenarios:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            Scenario.from_dict({"recipe": "zero", "colour": "red"})

    def test_bad_recipe(self):
        with pytest.raises(ConfigError):
            Scenario.from_dict({"recipe": "vortex"})

    def test_load(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({"recipe": "sinusoidal", "n_x": 4, "n_per_axis": 8}))
        scenario = Scenario.load(path)
        assert scenario.grid.shape == (4, 2, 8, 8, 8)

    def test_two_stream_bump_is_positive(self):
        state = build_initial_state(SLAB, "two_stream_bump", epsilon=0.5)
        assert state.min_density() >= 0.0

    def test_run_scenario_writes_artifacts(self, tmp_path):
        scenario = Scenario(
            recipe="sinusoidal",
            n_x=4,
            n_per_axis=8,
            v_max=4.0,
            horizon=1.0,
            dt=0.1,
            output_every=1,
        )
        summary = run_scenario(scenario, tmp_path)
        for name in ("ledger.csv", "inequalities.csv", "final.snap", "simulation.json"):
            assert (tmp_path / name).exists()
        assert summary["final_time"] == pytest.approx(1.0)
        assert "continuity" in summary["residuals"]
        assert isinstance(summary["zeta_monotone"], bool)

    @pytest.mark.slow
    def test_source_size_constant_is_scale_free(self):
        scenario = Scenario(
            recipe="sinusoidal", n_x=4, n_per_axis=8, v_max=4.0, horizon=1.0, dt=0.1
        )
        out = source_size_rescaling(scenario, factor=0.5)
        assert out["rescaled_constant"] == pytest.approx(out["constant"], rel=0.1)


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        state = _sinusoidal().with_values(_sinusoidal().f, 1.25)
        loaded = read_snapshot(write_snapshot(tmp_path / "state.snap", state))
        assert loaded.t == 1.25
        assert loaded.grid == SLAB
        np.testing.assert_array_equal(loaded.f, state.f)

    def test_truncated(self, tmp_path):
        path = write_snapshot(tmp_path / "state.snap", _sinusoidal())
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(SolverError):
            read_snapshot(path)
