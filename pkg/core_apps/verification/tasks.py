import itertools
from functools import partial
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from config import settings
from core_apps.common.tasks import ordered_map
from core_apps.velocity_space.models import VelocityGrid
from core_apps.verification.appendix import appendix_integral, closed_form
from core_apps.verification.models import VARIANTS, IntegralCase, IntegralResult, ProbeReport
from core_apps.verification.probes import lbound_probe, probe_samples, trilinear_probe

LATTICE_P = (0.25, 0.5, 1.0)
LATTICE_LAMBDA = (0.5, 1.0)
LATTICE_MU = (0.0, 1.5, 2.5)
CLOSED_FORM_TOL = 1e-8


def default_lattice(
    times: Optional[np.ndarray] = None,
    p_values: Sequence[float] = LATTICE_P,
    lambdas: Sequence[float] = LATTICE_LAMBDA,
    mus: Sequence[float] = LATTICE_MU,
) -> list[IntegralCase]:
    extra = {} if times is None else {"times": times}
    return [
        IntegralCase(p=p, lam=lam, mu=mu, **extra)
        for p, lam, mu in itertools.product(p_values, lambdas, mus)
    ]


@dataclass(frozen=True)
class IntegralJob:
    case: IntegralCase
    variant: str


def _evaluate(job: IntegralJob) -> IntegralResult:
    try:
        return appendix_integral(job.case, job.variant)
    except Exception as e:
        logger.error(f"Appendix integral {job.variant} {job.case.label} failed: {str(e)}")
        raise


def run_appendix(
    cases: Optional[Sequence[IntegralCase]] = None,
    variants: Sequence[str] = VARIANTS,
    workers: int = 1,
) -> list[IntegralResult]:
    cases = default_lattice() if cases is None else cases
    jobs = [IntegralJob(case, variant) for case in cases for variant in variants]
    logger.info(f"Evaluating {len(jobs)} appendix integrals on {len(cases)} cases")
    return ordered_map(_evaluate, jobs, workers)


def closed_form_error(result: IntegralResult) -> Optional[float]:
    exact = closed_form(result.case, result.variant)
    if exact is None:
        return None
    return float(np.max(np.abs(result.values - exact) / np.abs(exact)))


def appendix_summary(results: Sequence[IntegralResult]) -> dict:
    """Per-case rows plus the pass flags of the closed-form, growth and lower-bound checks."""
    growth_tol = settings.APPENDIX_GROWTH_TOL
    rows = []
    for result in results:
        error = closed_form_error(result)
        rows.append(
            {
                "case": result.case.label,
                "variant": result.variant,
                "sup_ratio": float(result.running_sup[-1]),
                "last_decade_growth": result.last_decade_growth,
                "lower_bound_holds": result.lower_bound_holds,
                "closed_form_error": error,
            }
        )
    errors = [row["closed_form_error"] for row in rows if row["closed_form_error"] is not None]
    criteria = {
        "closed_form": bool(errors) and max(errors) <= CLOSED_FORM_TOL,
        "bounded_growth": all(row["last_decade_growth"] < growth_tol for row in rows),
        "lower_bound": all(row["lower_bound_holds"] for row in rows),
    }
    return {"cases": rows, "criteria": criteria, "pass": all(criteria.values())}


def probe_refinement(
    coarse: ProbeReport, fine: ProbeReport, statistic: str
) -> dict[str, float]:
    before, after = getattr(coarse, statistic), getattr(fine, statistic)
    change = abs(after - before) / max(abs(before), 1e-300)
    return {
        "statistic": statistic,
        "coarse_n": coarse.n_per_axis,
        "fine_n": fine.n_per_axis,
        "coarse": before,
        "fine": after,
        "relative_change": change,
        "stable": bool(np.isfinite(after) and change <= settings.PROBE_REFINEMENT_TOL),
    }


def run_probes(
    count: Optional[int] = None,
    seed: Optional[int] = None,
    sizes: tuple[int, int] = (12, 16),
    v_max: Optional[float] = None,
    ell: float = 0.0,
    decay: Optional[float] = None,
    workers: int = 1,
) -> dict[str, ProbeReport]:
    """Both probes on the coarse and the fine grid; the fine report carries the refinement."""
    v_max = settings.COERCIVITY_V_MAX if v_max is None else v_max
    reports = {}
    trilinear = partial(trilinear_probe, decay=decay)
    for name, probe, statistic in (
        ("trilinear", trilinear, "maximum"),
        ("lbound", lbound_probe, "minimum"),
    ):
        coarse, fine = (
            probe(
                probe_samples(VelocityGrid(v_max=v_max, n_per_axis=n), count, seed, ell),
                workers=workers,
            )
            for n in sizes
        )
        fine.refinement = probe_refinement(coarse, fine, statistic)
        reports[name] = fine
    return reports
