from functools import wraps
from typing import Callable, Optional, Sequence

import click
from loguru import logger

from core_apps.cli_io.models import RunConfig
from core_apps.cli_io.pipelines import PIPELINES
from core_apps.cli_io.utils import (
    failed_criteria,
    finalize_summary,
    write_manifest,
    write_summary,
)
from core_apps.common.errors import ConfigError, CriterionFailure, LandauError
from core_apps.linear_decay.mode import PROFILES
from core_apps.linear_decay.synthesis import DATA_FAMILIES
from core_apps.nonlinear_sim.models import STEPPER_MODES
from core_apps.nonlinear_sim.scenarios import RECIPES


class LandauGroup(click.Group):
    """Maps toolkit errors onto click's exit codes: 2 for bad configuration, 1 otherwise."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ConfigError as e:
            raise click.UsageError(str(e), ctx=ctx) from e
        except CriterionFailure as e:
            raise click.ClickException(str(e)) from e
        except LandauError as e:
            logger.error(f"{ctx.invoked_subcommand} failed: {str(e)}")
            raise click.ClickException(f"{type(e).__name__}: {str(e)}") from e


def common_options(func: Callable) -> Callable:
    options = (
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run configuration."),
        click.option("--output", type=click.Path(file_okay=False), help="Directory for the run's files."),
        click.option("--seed", type=click.IntRange(min=0)),
        click.option("--workers", type=click.IntRange(min=1), help="1 keeps runs bit-reproducible."),
        click.option("--n", "n_per_axis", type=int, help="Velocity nodes per axis."),
        click.option("--v-max", "v_max", type=float),
    )
    for option in reversed(options):
        func = option(func)
    return func


def run_subcommand(subcommand: str, options: dict) -> dict:
    """Validates the merged config, writes the manifest, runs the pipeline and its summary."""
    config = RunConfig.build(subcommand, options.pop("config_path", None), options)
    output_dir = config.output_dir
    write_manifest(config, output_dir)
    summary = finalize_summary(PIPELINES[subcommand](config, output_dir))
    path = write_summary(summary, output_dir)
    click.echo(f"{subcommand}: {'pass' if summary['pass'] else 'FAIL'} ({path})")
    if not summary["pass"]:
        raise CriterionFailure(f"{subcommand} failed: {', '.join(failed_criteria(summary))}")
    return summary


def subcommand(name: str):
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def command(**options):
            return run_subcommand(name, options)

        return cli.command(name, help=func.__doc__)(common_options(command))

    return decorator


@click.group(cls=LandauGroup)
def cli() -> None:
    """Two-species Vlasov-Poisson-Landau verification toolkit."""


@click.option("--refine-n", "refine_n", type=int, help="Finer grid for the null-space refinement.")
@click.option("--samples", type=click.IntRange(min=1))
@subcommand("verify-collision")
def verify_collision() -> None:
    """Null space, symmetry, conservation and coercivity of the collision operator."""


@click.option("--recipe", type=click.Choice(RECIPES))
@click.option("--mode", type=click.Choice(STEPPER_MODES))
@click.option("--horizon", type=float)
@click.option("--dt", type=float)
@subcommand("verify-moments")
def verify_moments() -> None:
    """Moment-equation residuals of a slab run and the continuity order in dt."""


@click.option("--m", type=float, help="Derivative order of the synthesized norm.")
@click.option("--r", type=click.FloatRange(1.0, 2.0), help="Integrability index of the data, 1 <= r <= 2.")
@click.option("--family", type=click.Choice(DATA_FAMILIES))
@click.option("--profile", type=click.Choice(PROFILES))
@click.option("--shells", type=click.IntRange(min=2))
@click.option("--horizon", type=float)
@click.option("--dt", type=float)
@click.option("--mode-checks/--no-mode-checks", "mode_checks", default=None)
@subcommand("linear-decay")
def linear_decay() -> None:
    """Whole-space decay exponent from per-shell mode runs."""


@click.option("--scenario", type=click.Path(dir_okay=False), help="Scenario JSON file.")
@click.option("--recipe", type=click.Choice(RECIPES))
@click.option("--epsilon", type=float)
@click.option("--mode", type=click.Choice(STEPPER_MODES))
@click.option("--horizon", type=float)
@click.option("--dt", type=float)
@subcommand("simulate")
def simulate() -> None:
    """Nonlinear slab run with its energy ledger and inequality fits."""


@subcommand("appendix-integrals")
def appendix_integrals() -> None:
    """Upper and lower bounds of the time-weighted decay integrals."""


@click.option("--samples", type=click.IntRange(min=1))
@click.option("--ell", type=float)
@subcommand("probes")
def probes() -> None:
    """Trilinear and lower-bound probes on two velocity grids."""


@subcommand("report")
def report() -> None:
    """Aggregates every summary.json under the output root into one report."""


def main(argv: Optional[Sequence[str]] = None) -> None:
    cli.main(args=None if argv is None else list(argv), prog_name="manage.py")
