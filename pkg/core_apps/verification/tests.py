from dataclasses import replace

import numpy as np
import pytest

from core_apps.common.errors import FitError, GridError, QuadratureError, WeightError
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import sqrt_maxwellian
from core_apps.verification.appendix import (
    appendix_integral,
    gauss_panels,
    integral_value,
    lower_bound,
)
from core_apps.verification.fitting import fit_decay_exponent
from core_apps.verification.models import IntegralCase
from core_apps.verification.probes import (
    lbound_probe,
    lbound_terms,
    probe_samples,
    trilinear_probe,
    trilinear_terms,
)
from core_apps.verification.tasks import (
    appendix_summary,
    closed_form_error,
    run_appendix,
    run_probes,
)

SMALL = VelocityGrid(v_max=4.0, n_per_axis=8)
TIMES = np.logspace(-2.0, 3.0, 26)


class TestFitDecayExponent:
    """Log-log slope fits."""

    def test_exact_power_law(self):
        t = np.logspace(0.0, 3.0, 40)
        fit = fit_decay_exponent(t, (1.0 + t) ** -1.5)
        assert fit.slope == pytest.approx(-1.5, abs=1e-6)
        assert fit.points == 40

    def test_constant_series(self):
        t = np.linspace(0.0, 10.0, 20)
        assert fit_decay_exponent(t, np.full(20, 3.0)).slope == 0.0

    def test_corrected_power_law(self):
        t = np.logspace(0.0, 4.0, 81)
        values = (1.0 + t) ** -1.5 * (1.0 + 5.0 / (1.0 + t))
        fit = fit_decay_exponent(t, values, window=(1e2, 1e4))
        assert abs(fit.slope + 1.5) <= 0.05

    def test_too_few_points(self):
        t = np.logspace(0.0, 4.0, 20)
        with pytest.raises(FitError):
            fit_decay_exponent(t, 1.0 / (1.0 + t), window=(1e3, 2e3))

    def test_nonpositive_values(self):
        t = np.linspace(0.0, 1.0, 10)
        with pytest.raises(FitError):
            fit_decay_exponent(t, np.linspace(-1.0, 1.0, 10))


class TestGaussPanels:
    def test_polynomial_is_exact(self):
        assert gauss_panels(lambda x: x**5 - 2.0 * x, 0.0, 2.0) == pytest.approx(
            64.0 / 6.0 - 4.0, rel=1e-14
        )

    def test_empty_interval(self):
        assert gauss_panels(np.exp, 1.0, 1.0) == 0.0

    def test_singular_integrand_does_not_settle(self):
        with pytest.raises(QuadratureError):
            gauss_panels(lambda x: x**-0.5, 0.0, 1.0, max_level=6)


class TestAppendixIntegral:
    """Upper and lower bounds of the time-weighted decay integrals."""

    def test_case_validation(self):
        with pytest.raises(GridError):
            IntegralCase(p=0.0, lam=1.0, mu=0.0)
        with pytest.raises(GridError):
            IntegralCase(p=0.5, lam=-1.0, mu=0.0)

    def test_unknown_variant(self):
        with pytest.raises(GridError):
            integral_value(IntegralCase(p=1.0, lam=1.0, mu=0.0), "A3", 1.0)

    def test_closed_form_first_variant(self):
        result = appendix_integral(IntegralCase(p=1.0, lam=1.0, mu=0.0, times=TIMES), "A1")
        np.testing.assert_allclose(result.values, -np.expm1(-TIMES), rtol=1e-8)
        assert closed_form_error(result) <= 1e-8

    def test_closed_form_second_variant(self):
        case = IntegralCase(p=0.5, lam=1.0, mu=0.0, times=TIMES)
        result = appendix_integral(case, "A2")
        expected = -np.expm1(-np.sqrt(TIMES)) / 0.5
        np.testing.assert_allclose(result.values, expected, rtol=1e-8)

    def test_running_sup_settles(self):
        times = np.logspace(0.0, 4.0, 41)
        result = appendix_integral(IntegralCase(p=0.5, lam=1.0, mu=1.5, times=times))
        assert np.isfinite(result.running_sup[-1])
        assert result.last_decade_growth < 0.01

    def test_lower_bound_holds(self):
        for p in (0.25, 0.5, 1.0):
            result = appendix_integral(IntegralCase(p=p, lam=1.0, mu=1.5, times=TIMES))
            assert result.lower_bound_holds, p

    def test_literal_prefactor_overshoots(self):
        case = IntegralCase(p=0.5, lam=1.0, mu=0.0, times=np.array([1e4]))
        value = integral_value(case, "A1", 1e4)
        assert value < lower_bound(case, case.times, literal=True)[0]
        assert value >= lower_bound(case, case.times)[0]

    def test_second_variant_has_no_lower_bound(self):
        result = appendix_integral(IntegralCase(p=0.5, lam=1.0, mu=1.5, times=TIMES), "A2")
        assert np.all(np.isnan(result.lower_ratio))
        assert result.lower_bound_holds

    def test_summary_flags(self):
        cases = [
            IntegralCase(p=1.0, lam=1.0, mu=0.0, times=TIMES),
            IntegralCase(p=0.5, lam=1.0, mu=1.5, times=TIMES),
        ]
        summary = appendix_summary(run_appendix(cases))
        assert summary["criteria"]["closed_form"]
        assert summary["criteria"]["lower_bound"]
        assert len(summary["cases"]) == 4

    @pytest.mark.slow
    def test_default_lattice(self):
        summary = appendix_summary(run_appendix())
        assert summary["pass"], summary["criteria"]


@pytest.fixture(scope="module")
def samples():
    return probe_samples(SMALL, count=8, seed=17)


class TestTrilinearProbe:
    """Ratio of the weighted Gamma pairing to the norm products."""

    def test_zero_first_argument(self, samples):
        sample = replace(samples[1], g1=np.zeros_like(samples[1].g1))
        lhs, _ = trilinear_terms(sample)
        assert lhs == 0.0
        report = trilinear_probe([sample])
        assert report.maximum == 0.0

    def test_homogeneous(self, samples):
        sample = samples[2]
        doubled = replace(sample, g1=2.0 * sample.g1, g2=2.0 * sample.g2, g3=2.0 * sample.g3)
        lhs, rhs = trilinear_terms(sample)
        lhs2, rhs2 = trilinear_terms(doubled)
        assert lhs2 / rhs2 == pytest.approx(lhs / rhs, rel=1e-10)

    def test_seed_reproducible(self, samples):
        again = probe_samples(SMALL, count=8, seed=17)
        assert trilinear_probe(samples).ratios == trilinear_probe(again).ratios

    def test_finite_ratios(self, samples):
        report = trilinear_probe(samples)
        assert report.samples_used == 8
        assert np.isfinite(report.maximum) and report.maximum > 0.0

    def test_decay_must_be_large(self, samples):
        with pytest.raises(WeightError):
            trilinear_probe(samples, decay=2.0)


class TestLboundProbe:
    def test_positive_minimum(self, samples):
        assert lbound_probe(samples).minimum > 0.0

    def test_radial_function(self):
        grid = VelocityGrid(v_max=5.0, n_per_axis=24)
        radial = sqrt_maxwellian(grid) * (1.0 + grid.speed_squared)
        terms = lbound_terms(np.stack([radial, radial]), grid)
        assert terms["tangential"] <= 0.05 * terms["radial"]
        lower = terms["radial"] + terms["tangential"] + terms["zeroth"]
        assert terms["sigma"] / lower > 0.0

    def test_scale_invariant(self, samples):
        g = samples[0].g1
        base = lbound_terms(g, SMALL)
        scaled = lbound_terms(3.0 * g, SMALL)
        for name in base:
            assert scaled[name] == pytest.approx(9.0 * base[name], rel=1e-12)


@pytest.mark.slow
def test_probes_are_stable_under_refinement():
    reports = run_probes(count=40, seed=5)
    for name, report in reports.items():
        assert report.refinement["stable"], (name, report.refinement)
