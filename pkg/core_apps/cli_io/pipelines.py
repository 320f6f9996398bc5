from dataclasses import replace
from pathlib import Path

import numpy as np
from loguru import logger

from config import settings
from core_apps.cli_io.models import RunConfig
from core_apps.cli_io.utils import build_report, collect_summaries, write_report
from core_apps.collision.coercivity import coercivity_estimate, null_space_residuals
from core_apps.collision.operators import get_operator
from core_apps.common.errors import ConfigError
from core_apps.common.renderers import CSVRenderer
from core_apps.linear_decay.lyapunov import base_dissipation_fraction, verify_mode_inequality
from core_apps.linear_decay.mode import ModeGenerator, evolve_mode, velocity_profile
from core_apps.linear_decay.models import LyapunovConfig, ModeState, ShellSpec
from core_apps.linear_decay.synthesis import run_shell_sweep, synthesize_from_sweep
from core_apps.macro_micro.residuals import moment_residuals, write_residual_csv
from core_apps.macro_micro.utils import NULL_SPACE_LABELS
from core_apps.nonlinear_sim.equations import nonlinear_source
from core_apps.nonlinear_sim.scenarios import SCENARIO_SCHEMA, Scenario
from core_apps.nonlinear_sim.tasks import run_scenario, run_trajectory
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import maxwellian
from core_apps.verification.models import VARIANTS
from core_apps.verification.tasks import (
    LATTICE_LAMBDA,
    LATTICE_MU,
    LATTICE_P,
    appendix_summary,
    default_lattice,
    run_appendix,
    run_probes,
)

NULL_SPACE_TOL = 5e-2
NULL_SPACE_IMPROVEMENT = 3.0
ROUNDOFF_FLOOR = 1e-12
SYMMETRY_TOL = 1e-8
MASS_TOL = 1e-8
MOMENT_TOL = 1e-3
COERCIVITY_DRIFT = 0.2
ORDER_RANGE = (1.7, 2.3)
MODE_FREQUENCIES = (0.1, 0.2, 0.5, 1.0, 2.0)
MODE_RATE_RATIO = (0.125, 0.5)
REQUIRED_FRACTION = 0.99

APPENDIX_HEADER = ("case", "variant", "t", "value", "upper_ratio", "lower_ratio", "running_sup")
PROBE_HEADER = ("probe", "n_per_axis", "sample", "ratio")
NULL_SPACE_HEADER = ("generator", "n_per_axis", "residual")
DECAY_HEADER = ("time", "label", "value", "slope")


def _velocity_grid(config: RunConfig) -> VelocityGrid:
    return VelocityGrid(
        v_max=config.get("v_max", settings.V_MAX),
        n_per_axis=config.get("n_per_axis", settings.N_PER_AXIS),
    )


def improves_under_refinement(coarse, fine, factor: float = 1.0) -> bool:
    """Every fine-grid value is at roundoff or at least `factor` times below its coarse value."""
    coarse = np.atleast_1d(np.asarray(coarse, dtype=float))
    fine = np.atleast_1d(np.asarray(fine, dtype=float))
    return bool(np.all((fine <= ROUNDOFF_FLOOR) | (factor * fine <= coarse)))


def _bumped_maxwellian(grid: VelocityGrid) -> np.ndarray:
    v = grid.mesh
    shift = np.array([1.0, -0.5, 0.3])[:, None, None, None]
    return maxwellian(grid) * (1.0 + 0.1 * np.exp(-np.sum((v - shift) ** 2, axis=0)))


def _conservation(grid: VelocityGrid, delta_reg) -> dict[str, float]:
    operator = get_operator(grid, delta_reg)
    F = _bumped_maxwellian(grid)
    Q = operator.collide(F, F)
    return {
        "mass": float(abs(grid.integrate(Q))),
        "momentum": float(np.abs(grid.integrate(grid.mesh * Q)).max()),
        "energy": float(abs(grid.integrate(grid.speed_squared * Q))),
    }


def verify_collision(config: RunConfig, output_dir: Path) -> dict:
    grid = _velocity_grid(config)
    delta_reg = config.get("delta_reg")
    refined = VelocityGrid(v_max=grid.v_max, n_per_axis=config.get("refine_n", 2 * grid.n_per_axis))

    residuals = {g.n_per_axis: null_space_residuals(g, delta_reg) for g in (grid, refined)}
    improvement = residuals[grid.n_per_axis] / np.maximum(residuals[refined.n_per_axis], 1e-300)
    CSVRenderer(NULL_SPACE_HEADER).write(
        [
            (label, n, value)
            for n, values in residuals.items()
            for label, value in zip(NULL_SPACE_LABELS, values)
        ],
        output_dir / "null_space.csv",
    )

    small = VelocityGrid(v_max=grid.v_max, n_per_axis=config.get("symmetry_n", 12))
    dense = get_operator(small, delta_reg).dense_L()
    asymmetry = float(np.abs(dense - dense.T).max() / np.abs(dense).max())

    conservation = {g.n_per_axis: _conservation(g, delta_reg) for g in (grid, refined)}
    base = conservation[grid.n_per_axis]
    finer = conservation[refined.n_per_axis]

    coarse_n, fine_n = config.get("coercivity_sizes", [12, 16])
    reports = [
        coercivity_estimate(
            VelocityGrid(v_max=settings.COERCIVITY_V_MAX, n_per_axis=n),
            ell=config.get("ell", 0.0),
            samples=config.get("samples"),
            seed=config.seed,
            delta_reg=delta_reg,
        )
        for n in (coarse_n, fine_n)
    ]
    lambdas = [report.lambda_0 for report in reports]
    drift = abs(lambdas[1] - lambdas[0]) / max(abs(lambdas[0]), 1e-300)

    return {
        "subcommand": config.subcommand,
        "null_space": {str(n): dict(zip(NULL_SPACE_LABELS, values)) for n, values in residuals.items()},
        "null_space_improvement": dict(zip(NULL_SPACE_LABELS, improvement)),
        "symmetry": {"n_per_axis": small.n_per_axis, "relative_asymmetry": asymmetry},
        "conservation": {str(n): values for n, values in conservation.items()},
        "coercivity": [report.as_dict() for report in reports],
        "criteria": {
            "null_space": bool(np.all(residuals[grid.n_per_axis] <= NULL_SPACE_TOL)),
            "null_space_refinement": improves_under_refinement(
                residuals[grid.n_per_axis], residuals[refined.n_per_axis], NULL_SPACE_IMPROVEMENT
            ),
            "symmetry": asymmetry <= SYMMETRY_TOL,
            "mass_conservation": base["mass"] <= MASS_TOL,
            "momentum_energy": max(base["momentum"], base["energy"]) <= MOMENT_TOL,
            "conservation_refinement": improves_under_refinement(
                [base["momentum"], base["energy"]], [finer["momentum"], finer["energy"]]
            ),
            "coercivity_positive": min(lambdas) > 0.0,
            "coercivity_stable": drift <= COERCIVITY_DRIFT,
        },
    }


def _slab_scenario(config: RunConfig, defaults: dict) -> Scenario:
    """Scenario from an optional scenario file, then the slab keys of the run config."""
    data = dict(defaults)
    if "scenario" in config.values:
        data.update(Scenario.load(config.get("scenario")).as_dict())
    for key in SCENARIO_SCHEMA["properties"]:
        if key in config.values:
            data[key] = config.values[key]
    return Scenario.from_dict(data)


def verify_moments(config: RunConfig, output_dir: Path) -> dict:
    """Moment residuals of a slab run at dt and dt / 2, with the measured continuity order."""
    scenario = _slab_scenario(config, {"recipe": "sinusoidal", "horizon": 1.0, "dt": 0.1, "output_every": 1})
    if scenario.output_every != 1:
        raise ConfigError("verify-moments needs output_every = 1 for time derivatives")
    operator = get_operator(scenario.grid.velocity)
    reports = []
    for dt in (scenario.dt, 0.5 * scenario.dt):
        traj = run_trajectory(replace(scenario, dt=dt))
        sources = np.stack([nonlinear_source(state, operator) for state in traj.states()])
        reports.append(moment_residuals(traj.to_moment_trajectory(sources), operator))
    write_residual_csv(reports[1], output_dir / "residuals.csv")

    continuity = [report.summary()["continuity"]["max"] for report in reports]
    if continuity[1] > 0.0 and continuity[0] > 0.0:
        order = float(np.log2(continuity[0] / continuity[1]))
    else:
        order = float("inf")
    logger.info(f"Continuity residual {continuity[0]:.3e} -> {continuity[1]:.3e}, order {order:.3f}")
    return {
        "subcommand": config.subcommand,
        "scenario": scenario.as_dict(),
        "residuals": reports[1].summary(),
        "continuity": {"coarse": continuity[0], "fine": continuity[1], "order": order},
        "criteria": {"continuity_order": ORDER_RANGE[0] <= order <= ORDER_RANGE[1]},
    }


def _slope_tolerance(m: float) -> float:
    return 0.15 if m == 0.0 else 0.2


def _mode_checks(grid: VelocityGrid, config: RunConfig) -> dict:
    """Per-mode base dissipation and fitted Lyapunov rates on a few frequencies."""
    cfg = LyapunovConfig.from_settings(ell=0.0, kappa4=0.0, kappa5=0.0)
    dense = get_operator(grid).dense_L()
    horizon = config.get("mode_horizon", 20.0)
    dt = 0.1
    rows = {}
    for k_norm in MODE_FREQUENCIES:
        state = ModeState(f_hat=velocity_profile(grid), k=np.array([k_norm, 0.0, 0.0]), grid=grid)
        traj = evolve_mode(state, horizon, dt, generator=ModeGenerator(grid, state.k, dense_L=dense))
        fit = verify_mode_inequality(traj, cfg)
        rows[f"{k_norm:g}"] = {
            "base_fraction": base_dissipation_fraction(traj),
            "lambda_hat": fit.constant,
            "rate": fit.rate,
        }
    ratio = rows["0.1"]["rate"] / max(rows["0.2"]["rate"], 1e-300)
    return {
        "modes": rows,
        "rate_ratio": ratio,
        "criteria": {
            "base_dissipation": all(row["base_fraction"] >= REQUIRED_FRACTION for row in rows.values()),
            "lambda_positive": all(row["lambda_hat"] > 0.0 for row in rows.values()),
            "low_frequency_regime": MODE_RATE_RATIO[0] <= ratio <= MODE_RATE_RATIO[1],
        },
    }


def linear_decay(config: RunConfig, output_dir: Path) -> dict:
    grid = VelocityGrid(
        v_max=config.get("v_max", settings.LINEAR_V_MAX),
        n_per_axis=config.get("n_per_axis", settings.LINEAR_N_PER_AXIS),
    )
    m, r = float(config.get("m", 0.0)), float(config.get("r", 1.0))
    shells = ShellSpec.from_settings(
        **{
            name: config.get(key)
            for name, key in (("count", "shells"), ("k_min", "k_min"), ("k_max", "k_max"))
            if key in config.values
        }
    )
    sweep = run_shell_sweep(
        shells,
        grid=grid,
        horizon=config.get("horizon"),
        dt=config.get("dt"),
        profile=config.get("profile", "gaussian"),
        ell=config.get("ell", 0.0),
        output_every=config.get("output_every"),
        workers=config.workers,
    )
    window = tuple(config.get("window", settings.FIT_WINDOW))
    report = synthesize_from_sweep(sweep, m=m, r=r, family=config.get("family"), window=window)
    CSVRenderer(DECAY_HEADER).write(report.rows(), output_dir / "decay.csv")

    slope, target = report.exponents["slope"], report.exponents["target"]
    if target == 0.0:
        rate_ok = -0.1 < slope <= 0.0
    else:
        rate_ok = abs(slope - target) <= _slope_tolerance(m)
    summary = {
        "subcommand": config.subcommand,
        "exponents": report.exponents,
        "flags": list(report.flags),
        "criteria": {"rate": bool(rate_ok)},
    }
    if config.get("mode_checks", True):
        checks = _mode_checks(grid, config)
        summary["criteria"].update(checks.pop("criteria"))
        summary["mode_checks"] = checks
    return summary


def simulate(config: RunConfig, output_dir: Path) -> dict:
    scenario = _slab_scenario(config, {"recipe": "sinusoidal", "epsilon": 1e-2})
    result = run_scenario(scenario, output_dir)
    fractions = {name: fit["satisfied_fraction"] for name, fit in result["fits"].items()}
    return {
        "subcommand": config.subcommand,
        **result,
        "criteria": {
            "energy_inequalities": all(value >= REQUIRED_FRACTION for value in fractions.values()),
            "zeta_monotone": result["zeta_monotone"],
        },
    }


def appendix_integrals(config: RunConfig, output_dir: Path) -> dict:
    cases = default_lattice(
        p_values=config.get("lattice_p", LATTICE_P),
        lambdas=config.get("lattice_lambda", LATTICE_LAMBDA),
        mus=config.get("lattice_mu", LATTICE_MU),
    )
    results = run_appendix(cases, config.get("variants", VARIANTS), config.workers)
    rows = [
        (result.case.label, result.variant, t, value, upper, lower, sup)
        for result in results
        for t, value, upper, lower, sup in zip(
            result.case.times,
            result.values,
            result.upper_ratio,
            result.lower_ratio,
            result.running_sup,
        )
    ]
    CSVRenderer(APPENDIX_HEADER).write(rows, output_dir / "appendix.csv")
    return {"subcommand": config.subcommand, **appendix_summary(results)}


def probes(config: RunConfig, output_dir: Path) -> dict:
    reports = run_probes(
        count=config.get("samples"),
        seed=config.seed,
        sizes=tuple(config.get("sizes", [12, 16])),
        v_max=config.get("v_max"),
        ell=config.get("ell", 0.0),
        decay=config.get("decay"),
        workers=config.workers,
    )
    CSVRenderer(PROBE_HEADER).write(
        [
            (name, report.n_per_axis, index, ratio)
            for name, report in reports.items()
            for index, ratio in enumerate(report.ratios)
            if ratio is not None
        ],
        output_dir / "probes.csv",
    )
    criteria = {}
    for name, report in reports.items():
        criteria[f"{name}_finite"] = bool(np.isfinite(report.maximum) and np.isfinite(report.minimum))
        criteria[f"{name}_stable"] = report.refinement["stable"]
    return {
        "subcommand": config.subcommand,
        "probes": {name: report.as_dict() for name, report in reports.items()},
        "criteria": criteria,
    }


def report(config: RunConfig, output_dir: Path) -> dict:
    summaries = collect_summaries(output_dir)
    if not summaries:
        raise ConfigError(f"No summary.json found below {output_dir}")
    aggregated = build_report(summaries)
    write_report(aggregated, output_dir)
    logger.info(f"Aggregated {len(summaries)} run(s): pass={aggregated['pass']}")
    return {"subcommand": config.subcommand, "runs": sorted(summaries), "criteria": aggregated["criteria"]}


PIPELINES = {
    "verify-collision": verify_collision,
    "verify-moments": verify_moments,
    "linear-decay": linear_decay,
    "simulate": simulate,
    "appendix-integrals": appendix_integrals,
    "probes": probes,
    "report": report,
}
