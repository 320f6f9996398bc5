import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import jsonschema
import numpy as np
from loguru import logger

from config import settings
from core_apps.common.errors import ConfigError
from core_apps.common.models import SerializableModel
from core_apps.nonlinear_sim.models import STEPPER_MODES, SimState, SlabGrid
from core_apps.velocity_space.utils import sqrt_maxwellian

RECIPES = ("zero", "sinusoidal", "separable", "two_stream_bump")

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["recipe"],
    "properties": {
        "recipe": {"enum": list(RECIPES)},
        "epsilon": {"type": "number", "minimum": 0},
        "drift": {"type": "number", "minimum": 0},
        "harmonic": {"type": "integer", "minimum": 1},
        "n_x": {"type": "integer", "minimum": 2},
        "length": {"type": "number", "exclusiveMinimum": 0},
        "n_per_axis": {"type": "integer", "minimum": 8},
        "v_max": {"type": "number", "exclusiveMinimum": 0},
        "mode": {"enum": list(STEPPER_MODES)},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "output_every": {"type": "integer", "minimum": 1},
        "p_prime": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
    },
}


def _wave(grid: SlabGrid, harmonic: int, kind: str = "sin") -> np.ndarray:
    phase = 2.0 * np.pi * harmonic * grid.x / grid.length
    values = np.sin(phase) if kind == "sin" else np.cos(phase)
    return values[:, None, None, None, None]


def initial_profile(grid: SlabGrid, recipe: str, drift: float = 1.5) -> np.ndarray:
    """Velocity profile of each recipe at unit amplitude, shape (2, n, n, n)."""
    velocity = grid.velocity
    root = sqrt_maxwellian(velocity)
    v1 = velocity.mesh[0]
    if recipe == "sinusoidal":
        # only f_+ carries density
        return np.stack([root + 0.5 * v1 * root, 0.5 * v1 * root])
    if recipe == "separable":
        return np.stack([v1 * root, v1 * root])
    if recipe == "two_stream_bump":
        shifted = velocity.mesh.copy()
        bumps = 0.0
        for sign in (1.0, -1.0):
            shifted[0] = v1 - sign * drift
            squared = np.sum(shifted**2, axis=0)
            # M_u / sqrt(mu)
            bumps = bumps + np.exp(
                -0.5 * squared + 0.25 * velocity.speed_squared
            ) * (2.0 * np.pi) ** -0.75
        return np.stack([0.5 * bumps, 0.25 * bumps])
    raise ConfigError(f"Recipe {recipe!r} has no velocity profile; expected one of {RECIPES}")


def build_initial_state(
    grid: SlabGrid,
    recipe: str,
    epsilon: float = 1e-3,
    harmonic: int = 1,
    drift: float = 1.5,
) -> SimState:
    if recipe == "zero":
        return SimState.zero(grid)
    if recipe not in RECIPES:
        raise ConfigError(f"Unknown recipe {recipe!r}; expected one of {RECIPES}")
    kind = "cos" if recipe == "two_stream_bump" else "sin"
    profile = initial_profile(grid, recipe, drift)
    return SimState(f=epsilon * _wave(grid, harmonic, kind) * profile[None], grid=grid)


@dataclass(frozen=True)
class Scenario(SerializableModel):
    recipe: str
    epsilon: float = 1e-3
    drift: float = 1.5
    harmonic: int = 1
    n_x: int = field(default_factory=lambda: settings.SLAB_N_X)
    length: float = field(default_factory=lambda: settings.SLAB_LENGTH)
    n_per_axis: int = field(default_factory=lambda: settings.SLAB_N_PER_AXIS)
    v_max: float = field(default_factory=lambda: settings.V_MAX)
    mode: str = "imex"
    horizon: float = 10.0
    dt: float = 0.05
    output_every: int = 10
    p_prime: float = field(default_factory=lambda: settings.P_PRIME)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigError(f"Invalid scenario: {e.message}") from e
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read scenario {path}: {str(e)}") from e
        scenario = cls.from_dict(data)
        logger.info(f"Loaded scenario {scenario.recipe} from {path}")
        return scenario

    @property
    def grid(self) -> SlabGrid:
        return SlabGrid.build(self.n_x, self.length, self.n_per_axis, self.v_max)

    def initial_state(self, grid: Optional[SlabGrid] = None) -> SimState:
        return build_initial_state(
            self.grid if grid is None else grid,
            self.recipe,
            self.epsilon,
            self.harmonic,
            self.drift,
        )
