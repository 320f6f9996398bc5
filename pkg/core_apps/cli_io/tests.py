import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from config import settings
from core_apps.cli_io.commands import cli
from core_apps.cli_io.models import RunConfig
from core_apps.cli_io.pipelines import ROUNDOFF_FLOOR, improves_under_refinement
from core_apps.cli_io.utils import (
    EXIT_FAILURE,
    EXIT_PASS,
    EXIT_USAGE,
    REPORT_HEADER,
    build_report,
    collect_summaries,
    finalize_summary,
    write_report,
)
from core_apps.common.errors import ConfigError

TINY_LATTICE = {"lattice_p": [1.0], "lattice_lambda": [1.0], "lattice_mu": [0.0]}


def _write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def runner():
    return CliRunner()


def _run_twice(runner, tmp_path, args, config):
    """Two serial runs of the same subcommand into separate directories."""
    path = _write_json(tmp_path / "run.json", config)
    outputs, codes = [], []
    for name in ("first", "second"):
        out = tmp_path / name
        result = runner.invoke(
            cli, args + ["--config", str(path), "--output", str(out), "--workers", "1"]
        )
        assert result.exit_code in (EXIT_PASS, EXIT_FAILURE), result.output
        outputs.append(out)
        codes.append(result.exit_code)
    assert codes[0] == codes[1]
    return outputs, codes[0]


def _assert_identical(outputs, names):
    for name in names:
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name


class TestRunConfig:
    """Validation and merging of run configurations."""

    def test_unknown_key_is_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(subcommand="probes", values={"shells": 4})

    def test_wrong_type_is_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(subcommand="linear-decay", values={"r": 3})

    def test_odd_grid_is_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(subcommand="probes", values={"n_per_axis": 9})

    def test_unknown_subcommand(self):
        with pytest.raises(ConfigError):
            RunConfig(subcommand="plot")

    def test_flags_win_over_file(self, tmp_path):
        path = _write_json(tmp_path / "run.json", {"samples": 10, "seed": 3})
        config = RunConfig.build("probes", path, {"samples": 4, "seed": None})
        assert config.get("samples") == 4
        assert config.seed == 3

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.build("probes", path)

    def test_default_output_dir(self):
        assert RunConfig(subcommand="probes").output_dir == Path(settings.OUTPUT_DIR) / "probes"
        assert RunConfig(subcommand="report").output_dir == Path(settings.OUTPUT_DIR)

    def test_manifest(self):
        manifest = RunConfig(subcommand="probes", values={"seed": 1}).manifest()
        assert manifest["version"] == settings.VERSION
        assert manifest["config"] == {"seed": 1}
        assert manifest["subcommand"] == "probes"


class TestSummaries:
    def test_pass_is_the_and_of_criteria(self):
        assert finalize_summary({"criteria": {"a": True, "b": True}})["pass"]
        assert not finalize_summary({"criteria": {"a": True, "b": False}})["pass"]
        assert not finalize_summary({"criteria": {}})["pass"]

    def test_collect_skips_the_root(self, tmp_path):
        _write_json(tmp_path / "summary.json", {"pass": False})
        _write_json(tmp_path / "probes" / "summary.json", {"pass": True})
        assert list(collect_summaries(tmp_path)) == ["probes"]

    def test_missing_root(self, tmp_path):
        with pytest.raises(ConfigError):
            collect_summaries(tmp_path / "absent")

    def test_report_files(self, tmp_path):
        report = build_report(
            {
                "a": {"subcommand": "probes", "criteria": {"x": True}, "pass": True},
                "b": {"subcommand": "simulate", "criteria": {"y": False}, "pass": False},
            }
        )
        assert not report["pass"]
        _, csv_path = write_report(report, tmp_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert lines[2] == "b,simulate,y,false"


class TestRefinementCriteria:
    """Grid-refinement checks used by verify-collision."""

    def test_residuals_at_roundoff_pass(self):
        assert improves_under_refinement([5.5e-17, 3.9e-16], [3.1e-16, 4.9e-16], factor=3.0)

    def test_required_improvement(self):
        assert improves_under_refinement([1e-3, 4e-4], [2e-4, 1e-4], factor=3.0)
        assert not improves_under_refinement([1e-3, 4e-4], [2e-4, 2e-4], factor=3.0)

    def test_conservation_must_not_grow(self):
        assert improves_under_refinement([1e-4, 2e-5], [1e-4, 1e-5])
        assert not improves_under_refinement([1e-4, 2e-5], [1e-4, 3e-5])
        assert improves_under_refinement([1e-14], [0.5 * ROUNDOFF_FLOOR])


class TestCli:
    """Subcommands through the click entry point."""

    def test_unknown_flag_writes_nothing(self, runner, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(cli, ["probes", "--output", str(out), "--bogus", "1"])
        assert result.exit_code == EXIT_USAGE
        assert not out.exists()

    def test_unknown_config_key_writes_nothing(self, runner, tmp_path):
        out = tmp_path / "run"
        config = _write_json(tmp_path / "run.json", {"horizon": 5.0})
        result = runner.invoke(
            cli, ["appendix-integrals", "--config", str(config), "--output", str(out)]
        )
        assert result.exit_code == EXIT_USAGE
        assert not out.exists()

    def test_appendix_integrals(self, runner, tmp_path):
        config = _write_json(tmp_path / "run.json", TINY_LATTICE)
        outputs = []
        for name in ("first", "second"):
            out = tmp_path / name
            result = runner.invoke(
                cli,
                ["appendix-integrals", "--config", str(config), "--output", str(out), "--workers", "1"],
            )
            assert result.exit_code == EXIT_PASS, result.output
            outputs.append(out)
        summary = json.loads((outputs[0] / "summary.json").read_text())
        assert summary["pass"] and summary["criteria"]["closed_form"]
        manifest = json.loads((outputs[0] / "manifest.json").read_text())
        assert manifest["subcommand"] == "appendix-integrals"
        assert manifest["config"]["lattice_p"] == [1.0]
        for name in ("summary.json", "appendix.csv"):
            assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()

    def test_probes(self, runner, tmp_path):
        args = ["probes", "--samples", "4", "--seed", "11"]
        outputs, code = _run_twice(runner, tmp_path, args, {"sizes": [8, 10]})
        summary = json.loads((outputs[0] / "summary.json").read_text())
        assert summary["pass"] == (code == EXIT_PASS)
        assert set(summary["criteria"]) == {
            "trilinear_finite",
            "trilinear_stable",
            "lbound_finite",
            "lbound_stable",
        }
        _assert_identical(outputs, ("summary.json", "probes.csv"))

    def test_simulate(self, runner, tmp_path):
        args = ["simulate", "--n", "8", "--v-max", "4", "--horizon", "1.0", "--dt", "0.1"]
        outputs, _ = _run_twice(runner, tmp_path, args, {"n_x": 4, "output_every": 1})
        for name in ("manifest.json", "summary.json", "ledger.csv", "inequalities.csv", "final.snap"):
            assert (outputs[0] / name).exists(), name
        summary = json.loads((outputs[0] / "summary.json").read_text())
        assert summary["scenario"]["epsilon"] == 1e-2
        assert set(summary["criteria"]) == {"energy_inequalities", "zeta_monotone"}
        _assert_identical(outputs, ("summary.json", "ledger.csv", "inequalities.csv", "final.snap"))

    def test_verify_moments(self, runner, tmp_path):
        args = ["verify-moments", "--n", "8", "--v-max", "4", "--horizon", "0.4", "--dt", "0.1"]
        outputs, _ = _run_twice(runner, tmp_path, args, {"n_x": 4, "output_every": 1})
        summary = json.loads((outputs[0] / "summary.json").read_text())
        assert set(summary["criteria"]) == {"continuity_order"}
        assert summary["continuity"]["coarse"] >= 0.0
        _assert_identical(outputs, ("summary.json", "residuals.csv"))

    def test_verify_moments_needs_every_sample(self, runner, tmp_path):
        config = _write_json(tmp_path / "run.json", {"output_every": 2})
        out = tmp_path / "moments"
        result = runner.invoke(cli, ["verify-moments", "--config", str(config), "--output", str(out)])
        assert result.exit_code == EXIT_USAGE

    def test_linear_decay(self, runner, tmp_path):
        config = {
            "shells": 3,
            "k_min": 0.5,
            "k_max": 2.0,
            "horizon": 2.0,
            "dt": 0.1,
            "output_every": 1,
            "window": [0.5, 2.0],
            "mode_checks": False,
        }
        args = ["linear-decay", "--n", "8", "--v-max", "4", "--m", "0", "--r", "1.5"]
        outputs, code = _run_twice(runner, tmp_path, args, config)
        summary = json.loads((outputs[0] / "summary.json").read_text())
        assert set(summary["criteria"]) == {"rate"}
        assert summary["exponents"]["r"] == 1.5
        assert summary["exponents"]["family"] == "zr_critical"
        assert summary["pass"] == (code == EXIT_PASS)
        _assert_identical(outputs, ("summary.json", "decay.csv"))

    def test_missing_scenario_file(self, runner, tmp_path):
        out = tmp_path / "sim"
        result = runner.invoke(
            cli, ["simulate", "--scenario", str(tmp_path / "absent.json"), "--output", str(out)]
        )
        assert result.exit_code == EXIT_USAGE

    def test_verify_collision_on_small_grids(self, runner, tmp_path):
        config = _write_json(
            tmp_path / "run.json",
            {"refine_n": 10, "symmetry_n": 8, "coercivity_sizes": [8, 10], "samples": 3},
        )
        out = tmp_path / "collision"
        result = runner.invoke(
            cli,
            ["verify-collision", "--config", str(config), "--n", "8", "--v-max", "5", "--output", str(out)],
        )
        assert result.exit_code in (EXIT_PASS, EXIT_FAILURE)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["criteria"]["mass_conservation"]
        assert summary["criteria"]["symmetry"]
        assert summary["criteria"]["null_space_refinement"]
        assert "conservation_refinement" in summary["criteria"]
        assert len((out / "null_space.csv").read_text().splitlines()) == 1 + 2 * 6

    def test_report(self, runner, tmp_path):
        _write_json(
            tmp_path / "probes" / "summary.json",
            {"subcommand": "probes", "criteria": {"x": True}, "pass": True},
        )
        _write_json(
            tmp_path / "simulate" / "summary.json",
            {"subcommand": "simulate", "criteria": {"y": True}, "pass": True},
        )
        result = runner.invoke(cli, ["report", "--output", str(tmp_path)])
        assert result.exit_code == EXIT_PASS, result.output
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["pass"]
        assert sorted(report["runs"]) == ["probes", "simulate"]

        _write_json(
            tmp_path / "linear" / "summary.json",
            {"subcommand": "linear-decay", "criteria": {"rate": False}, "pass": False},
        )
        result = runner.invoke(cli, ["report", "--output", str(tmp_path)])
        assert result.exit_code == EXIT_FAILURE

    def test_report_without_runs(self, runner, tmp_path):
        result = runner.invoke(cli, ["report", "--output", str(tmp_path)])
        assert result.exit_code == EXIT_USAGE
