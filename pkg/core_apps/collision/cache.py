import struct
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from loguru import logger

from config import settings
from core_apps.common.errors import SolverError
from core_apps.velocity_space.models import VelocityGrid

MAGIC = b"LNDU"
FORMAT_VERSION = 1
# magic, version, n, v_max, delta_reg, kind, matrix dimension
HEADER = struct.Struct("<4sIIdd16sQ")


def cache_path(kind: str, grid: VelocityGrid, delta_reg: float, root: Optional[Path] = None) -> Path:
    root = Path(settings.CACHE_DIR if root is None else root)
    name = f"{kind}_n{grid.n_per_axis}_v{grid.v_max!r}_d{delta_reg!r}.bin"
    return root / name


def write_matrix(
    path: Path, matrix: np.ndarray, kind: str, grid: VelocityGrid, delta_reg: float
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    header = HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        grid.n_per_axis,
        grid.v_max,
        delta_reg,
        kind.encode("ascii"),
        matrix.shape[0],
    )
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def read_matrix(path: Path, kind: str, grid: VelocityGrid, delta_reg: float) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise SolverError(f"Cache file {path} is truncated")
    magic, version, n, v_max, stored_delta, stored_kind, size = HEADER.unpack_from(raw)
    expected = (MAGIC, FORMAT_VERSION, grid.n_per_axis, grid.v_max, delta_reg, kind)
    found = (magic, version, n, v_max, stored_delta, stored_kind.rstrip(b"\0").decode("ascii"))
    if found != expected:
        raise SolverError(f"Cache file {path} header {found} does not match {expected}")
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if body.size != size * size:
        raise SolverError(f"Cache file {path} holds {body.size} values, expected {size * size}")
    return body.reshape(size, size).astype(float)


def load_or_build(
    kind: str,
    grid: VelocityGrid,
    delta_reg: float,
    builder: Callable[[], np.ndarray],
    root: Optional[Path] = None,
    use_cache: bool = True,
) -> np.ndarray:
    """Return the cached dense matrix when present, else build and store it."""
    if not use_cache:
        return builder()
    path = cache_path(kind, grid, delta_reg, root)
    if path.exists():
        try:
            matrix = read_matrix(path, kind, grid, delta_reg)
            logger.debug(f"Loaded {kind} from {path}")
            return matrix
        except SolverError as e:
            logger.warning(f"Ignoring unusable cache entry: {str(e)}")
    matrix = builder()
    write_matrix(path, matrix, kind, grid, delta_reg)
    logger.info(f"Cached {kind} ({matrix.shape[0]}x{matrix.shape[1]}) at {path}")
    return matrix
