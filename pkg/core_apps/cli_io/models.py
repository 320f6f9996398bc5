import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema
from loguru import logger

from config import settings
from core_apps.common.errors import ConfigError
from core_apps.common.models import SerializableModel
from core_apps.linear_decay.mode import PROFILES
from core_apps.linear_decay.synthesis import DATA_FAMILIES
from core_apps.nonlinear_sim.models import STEPPER_MODES
from core_apps.nonlinear_sim.scenarios import RECIPES
from core_apps.verification.models import VARIANTS

POSITIVE = {"type": "number", "exclusiveMinimum": 0}
GRID_SIZE = {"type": "integer", "minimum": 8, "multipleOf": 2}
SIZE_PAIR = {"type": "array", "items": GRID_SIZE, "minItems": 2, "maxItems": 2}
NUMBER_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1}

COMMON_PROPERTIES = {
    "n_per_axis": GRID_SIZE,
    "v_max": POSITIVE,
    "seed": {"type": "integer", "minimum": 0},
    "workers": {"type": "integer", "minimum": 1},
    "output": {"type": "string", "minLength": 1},
}

SLAB_PROPERTIES = {
    "recipe": {"enum": list(RECIPES)},
    "epsilon": {"type": "number", "minimum": 0},
    "drift": {"type": "number", "minimum": 0},
    "harmonic": {"type": "integer", "minimum": 1},
    "n_x": {"type": "integer", "minimum": 2},
    "length": POSITIVE,
    "mode": {"enum": list(STEPPER_MODES)},
    "horizon": POSITIVE,
    "dt": POSITIVE,
    "output_every": {"type": "integer", "minimum": 1},
}

SUBCOMMAND_PROPERTIES = {
    "verify-collision": {
        "refine_n": GRID_SIZE,
        "symmetry_n": GRID_SIZE,
        "coercivity_sizes": SIZE_PAIR,
        "samples": {"type": "integer", "minimum": 1},
        "ell": {"type": "number", "minimum": 0},
        "delta_reg": POSITIVE,
    },
    "verify-moments": SLAB_PROPERTIES,
    "linear-decay": {
        "m": {"type": "number", "minimum": 0},
        "r": {"type": "number", "minimum": 1, "maximum": 2},
        "family": {"enum": list(DATA_FAMILIES)},
        "profile": {"enum": list(PROFILES)},
        "shells": {"type": "integer", "minimum": 2},
        "k_min": POSITIVE,
        "k_max": POSITIVE,
        "horizon": POSITIVE,
        "dt": POSITIVE,
        "output_every": {"type": "integer", "minimum": 1},
        "ell": {"type": "number", "minimum": 0},
        "window": {"type": "array", "items": POSITIVE, "minItems": 2, "maxItems": 2},
        "mode_checks": {"type": "boolean"},
        "mode_horizon": POSITIVE,
    },
    "simulate": {
        **SLAB_PROPERTIES,
        "scenario": {"type": "string", "minLength": 1},
        "p_prime": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
    },
    "appendix-integrals": {
        "variants": {"type": "array", "items": {"enum": list(VARIANTS)}, "minItems": 1},
        "lattice_p": {**NUMBER_LIST, "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "lattice_lambda": {**NUMBER_LIST, "items": POSITIVE},
        "lattice_mu": {**NUMBER_LIST, "items": {"type": "number", "minimum": 0}},
    },
    "probes": {
        "samples": {"type": "integer", "minimum": 1},
        "sizes": SIZE_PAIR,
        "ell": {"type": "number"},
        "decay": {"type": "number", "minimum": 4},
    },
    "report": {},
}

SUBCOMMANDS = tuple(SUBCOMMAND_PROPERTIES)


def run_config_schema(subcommand: str) -> dict:
    if subcommand not in SUBCOMMAND_PROPERTIES:
        raise ConfigError(f"Unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}")
    return {
        "type": "object",
        "additionalProperties": False,
        "properties": {**COMMON_PROPERTIES, **SUBCOMMAND_PROPERTIES[subcommand]},
    }


def read_config_file(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {str(e)}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return data


@dataclass(frozen=True)
class RunConfig(SerializableModel):
    """Validated options of one subcommand: config file values overlaid with flags."""

    subcommand: str
    values: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        try:
            jsonschema.validate(self.values, run_config_schema(self.subcommand))
        except jsonschema.ValidationError as e:
            where = ".".join(str(part) for part in e.absolute_path) or "config"
            raise ConfigError(f"Invalid {self.subcommand} {where}: {e.message}") from e

    @classmethod
    def build(
        cls,
        subcommand: str,
        config_path: Optional[Union[str, Path]] = None,
        flags: Optional[dict] = None,
    ) -> "RunConfig":
        values = {} if config_path is None else read_config_file(config_path)
        overrides = {key: value for key, value in (flags or {}).items() if value is not None}
        for key in sorted(set(values) & set(overrides)):
            logger.debug(f"Flag --{key} overrides the config file value {values[key]!r}")
        config = cls(subcommand=subcommand, values={**values, **overrides})
        logger.info(f"{subcommand}: {len(config.values)} option(s) set")
        return config

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self.get("seed", settings.SEED)

    @property
    def workers(self) -> int:
        return self.get("workers", settings.WORKERS)

    @property
    def output_dir(self) -> Path:
        if "output" in self.values:
            return Path(self.values["output"])
        if self.subcommand == "report":
            return Path(settings.OUTPUT_DIR)
        return Path(settings.OUTPUT_DIR) / self.subcommand

    def manifest(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "version": settings.VERSION,
            "settings_module": os.environ.get("LANDAU_SETTINGS_MODULE"),
            "config": dict(sorted(self.values.items())),
        }
