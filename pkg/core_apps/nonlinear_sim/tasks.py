from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from loguru import logger

from core_apps.collision.operators import get_operator
from core_apps.common.renderers import CSVRenderer, JSONRenderer
from core_apps.common.tasks import ordered_map
from core_apps.macro_micro.residuals import moment_residuals
from core_apps.nonlinear_sim.equations import nonlinear_source
from core_apps.nonlinear_sim.inequalities import energy_inequality_residuals
from core_apps.nonlinear_sim.models import SimTrajectory
from core_apps.nonlinear_sim.scenarios import Scenario
from core_apps.nonlinear_sim.snapshots import write_snapshot
from core_apps.nonlinear_sim.stepping import simulate

FIT_HEADER = ("inequality", "constant", "satisfied_fraction", "violations_at_half", "samples")
ZETA_WARMUP = 0.05


def run_trajectory(scenario: Scenario) -> SimTrajectory:
    grid = scenario.grid
    try:
        return simulate(
            scenario.initial_state(grid),
            scenario.horizon,
            scenario.dt,
            mode=scenario.mode,
            output_every=scenario.output_every,
            operator=get_operator(grid.velocity),
            p_prime=scenario.p_prime,
        )
    except Exception as e:
        logger.error(f"Scenario {scenario.recipe} ({scenario.mode}) failed: {str(e)}")
        raise


def zeta_monotone(traj: SimTrajectory, warmup: float = ZETA_WARMUP) -> bool:
    """zeta does not increase once the first warmup fraction of the horizon has passed."""
    zeta = traj.ledger.series("zeta")
    times = np.asarray(traj.times)
    late = zeta[times >= times[0] + warmup * (times[-1] - times[0])]
    slack = 1e-12 * max(float(np.max(np.abs(zeta))), 1e-300)
    return bool(np.all(np.diff(late) <= slack))


def run_scenario(scenario: Scenario, output_dir: Optional[Path] = None) -> dict:
    """Simulate, fit the energy inequalities and, with output_dir, write the artifacts."""
    traj = run_trajectory(scenario)
    operator = get_operator(traj.grid.velocity)
    report = energy_inequality_residuals(traj, operator)
    sources = np.stack([nonlinear_source(state, operator) for state in traj.states()])
    residuals = moment_residuals(traj.to_moment_trajectory(sources), operator)
    summary = {
        "scenario": scenario.as_dict(),
        "fits": {name: fit.as_dict() for name, fit in report.fits.items()},
        "sign_pattern": report.sign_pattern,
        "decay": report.decay,
        "flags": list(report.flags),
        "zeta_monotone": zeta_monotone(traj),
        "residuals": residuals.summary(),
        "final_time": float(traj.times[-1]),
    }
    if output_dir is not None:
        output_dir = Path(output_dir)
        CSVRenderer(traj.ledger.header()).write(traj.ledger.rows(), output_dir / "ledger.csv")
        CSVRenderer(FIT_HEADER).write(report.rows(), output_dir / "inequalities.csv")
        write_snapshot(output_dir / "final.snap", traj.final)
        JSONRenderer().write(summary, output_dir / "simulation.json")
    return summary


@dataclass(frozen=True)
class AmplitudeJob:
    scenario: Scenario
    epsilon: float


def _source_size_constant(job: AmplitudeJob) -> float:
    traj = run_trajectory(replace(job.scenario, epsilon=job.epsilon))
    ledger = traj.ledger
    energy = ledger.series("energy_3_3")
    size = ledger.series("source_size")
    positive = energy > 0.0
    return float(np.max(size[positive] / energy[positive])) if positive.any() else 0.0


def source_size_rescaling(
    scenario: Scenario, factor: float = 0.5, workers: int = 1
) -> dict[str, float]:
    """Largest |N| / E_3;3 along the run at epsilon and at factor * epsilon."""
    jobs = [
        AmplitudeJob(scenario, scenario.epsilon),
        AmplitudeJob(scenario, factor * scenario.epsilon),
    ]
    full, scaled = ordered_map(_source_size_constant, jobs, workers)
    logger.info(f"|N| / E_3;3: {full:.4g} at eps, {scaled:.4g} at {factor:g} eps")
    return {"constant": full, "rescaled_constant": scaled, "factor": factor}
