import json
from pathlib import Path
from typing import Union

from loguru import logger

from core_apps.cli_io.models import RunConfig
from core_apps.common.errors import ConfigError
from core_apps.common.renderers import CSVRenderer, JSONRenderer

EXIT_PASS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.json"
REPORT_HEADER = ("run", "subcommand", "criterion", "pass")


def write_manifest(config: RunConfig, output_dir: Union[str, Path]) -> Path:
    return JSONRenderer().write(config.manifest(), Path(output_dir) / MANIFEST_NAME)


def failed_criteria(summary: dict) -> list[str]:
    return sorted(name for name, ok in summary.get("criteria", {}).items() if not ok)


def finalize_summary(summary: dict) -> dict:
    """Sets the overall pass flag as the AND of the per-criterion flags."""
    criteria = {name: bool(ok) for name, ok in summary.get("criteria", {}).items()}
    return {**summary, "criteria": criteria, "pass": bool(criteria) and all(criteria.values())}


def write_summary(summary: dict, output_dir: Union[str, Path]) -> Path:
    return JSONRenderer().write(summary, Path(output_dir) / SUMMARY_NAME)


def collect_summaries(root: Union[str, Path]) -> dict[str, dict]:
    """summary.json files below root, keyed by their directory relative to root."""
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"Output root {root} does not exist")
    found = {}
    for path in sorted(root.rglob(SUMMARY_NAME)):
        if path.parent == root:
            continue
        try:
            found[path.parent.relative_to(root).as_posix()] = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            logger.warning(f"Skipping unreadable summary {path}: {str(e)}")
    return found


def build_report(summaries: dict[str, dict]) -> dict:
    runs = {}
    for name, summary in summaries.items():
        runs[name] = {
            "subcommand": summary.get("subcommand", name),
            "criteria": summary.get("criteria", {}),
            "pass": bool(summary.get("pass", False)),
        }
    return {
        "runs": runs,
        "criteria": {name: run["pass"] for name, run in runs.items()},
        "pass": bool(runs) and all(run["pass"] for run in runs.values()),
    }


def write_report(report: dict, output_dir: Union[str, Path]) -> tuple[Path, Path]:
    output_dir = Path(output_dir)
    rows = [
        (name, run["subcommand"], criterion, ok)
        for name, run in report["runs"].items()
        for criterion, ok in sorted(run["criteria"].items())
    ]
    json_path = JSONRenderer().write(report, output_dir / "report.json")
    csv_path = CSVRenderer(REPORT_HEADER).write(rows, output_dir / "report.csv")
    return json_path, csv_path
