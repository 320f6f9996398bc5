import struct
from pathlib import Path
from typing import Union

import numpy as np
from loguru import logger

from core_apps.common.errors import SolverError
from core_apps.field.models import SlabGeometry
from core_apps.nonlinear_sim.models import SimState, SlabGrid
from core_apps.velocity_space.models import VelocityGrid

MAGIC = b"LNDS"
FORMAT_VERSION = 1
# magic, version, n_x, n, length, v_max, t
HEADER = struct.Struct("<4sIIIddd")


def write_snapshot(path: Union[str, Path], state: SimState) -> Path:
    """Header followed by f in row-major (site, species, v1, v2, v3) order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = state.grid
    header = HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        grid.n_x,
        grid.velocity.n_per_axis,
        grid.length,
        grid.velocity.v_max,
        state.t,
    )
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(state.f, dtype="<f8").tobytes())
    logger.debug(f"Wrote snapshot t={state.t:g} to {path}")
    return path


def read_snapshot(path: Union[str, Path]) -> SimState:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise SolverError(f"Snapshot {path} is truncated")
    magic, version, n_x, n, length, v_max, t = HEADER.unpack_from(raw)
    if (magic, version) != (MAGIC, FORMAT_VERSION):
        raise SolverError(f"Snapshot {path} has header {magic!r} v{version}")
    grid = SlabGrid(
        geometry=SlabGeometry(n_x=n_x, length=length),
        velocity=VelocityGrid(v_max=v_max, n_per_axis=n),
    )
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if body.size != int(np.prod(grid.shape)):
        raise SolverError(
            f"Snapshot {path} holds {body.size} values, expected {int(np.prod(grid.shape))}"
        )
    return SimState(f=body.reshape(grid.shape).astype(float), grid=grid, t=t)
