import logging
import logging.config
import sys
from os import getenv, path
from pathlib import Path

from dotenv import load_dotenv
from loguru import logger

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

APPS_DIR = BASE_DIR / "core_apps"

local_env_file = path.join(BASE_DIR, ".envs", ".env.local")

if path.exists(local_env_file):
    load_dotenv(local_env_file)


def _env_float(name: str, default: float) -> float:
    value = getenv(name)
    return float(value) if value not in (None, "") else default


def _env_int(name: str, default: int) -> int:
    value = getenv(name)
    return int(value) if value not in (None, "") else default


VERSION = "0.4.0"

# Velocity grid

V_MAX = _env_float("LANDAU_V_MAX", 6.0)
N_PER_AXIS = _env_int("LANDAU_N_PER_AXIS", 24)
TOL_MASS = _env_float("LANDAU_TOL_MASS", 1e-6)

# Collision kernel

DELTA_REG = _env_float("LANDAU_DELTA_REG", 0.5)
# Cap on <v>-weighted operator values near the velocity boundary.
OVERFLOW_CAP = _env_float("LANDAU_OVERFLOW_CAP", 1e150)
COERCIVITY_SAMPLES = _env_int("LANDAU_COERCIVITY_SAMPLES", 50)
COERCIVITY_V_MAX = _env_float("LANDAU_COERCIVITY_V_MAX", 4.0)
# Total polynomial degree of the smooth trial space for the eigen-solve.
COERCIVITY_DEGREE = _env_int("LANDAU_COERCIVITY_DEGREE", 3)

# Linear decay

LINEAR_N_PER_AXIS = _env_int("LANDAU_LINEAR_N_PER_AXIS", 10)
LINEAR_V_MAX = _env_float("LANDAU_LINEAR_V_MAX", 5.0)
LINEAR_DT = _env_float("LANDAU_LINEAR_DT", 1.0)
SHELL_COUNT = _env_int("LANDAU_SHELL_COUNT", 32)
SHELL_K_MIN = _env_float("LANDAU_SHELL_K_MIN", 1e-2)
SHELL_K_MAX = _env_float("LANDAU_SHELL_K_MAX", 10.0)
FIT_WINDOW = (10.0, 1000.0)
# Dissipation constant and ball radius of the weighted instantaneous inequalities.
WEIGHTED_LAMBDA = _env_float("LANDAU_WEIGHTED_LAMBDA", 0.1)
BALL_RADIUS = _env_float("LANDAU_BALL_RADIUS", 3.0)
SHELL_OUTPUT_EVERY = _env_int("LANDAU_SHELL_OUTPUT_EVERY", 5)

LYAPUNOV_DEFAULTS = {
    "kappa1": _env_float("LANDAU_KAPPA1", 0.1),
    "kappa2": _env_float("LANDAU_KAPPA2", 0.01),
    "kappa3": _env_float("LANDAU_KAPPA3", 0.1),
    "kappa4": _env_float("LANDAU_KAPPA4", 0.05),
    "kappa5": _env_float("LANDAU_KAPPA5", 0.05),
    "ell": _env_float("LANDAU_ELL", 1.0),
}

# Nonlinear slab

SLAB_N_X = _env_int("LANDAU_SLAB_N_X", 8)
SLAB_LENGTH = _env_float("LANDAU_SLAB_LENGTH", 4.0 * 3.141592653589793)
SLAB_N_PER_AXIS = _env_int("LANDAU_SLAB_N_PER_AXIS", 12)
TOL_POS = _env_float("LANDAU_TOL_POS", 1e-10)
SMALLNESS_THRESHOLD = _env_float("LANDAU_SMALLNESS", 1e-2)
P_PRIME = _env_float("LANDAU_P_PRIME", 0.25)

ZETA_WEIGHTS = {
    "c_alpha": 1.0,
    "eta_alpha": 0.1,
    "eta_alpha_beta": 0.1,
    "eta_field": 0.01,
    "eta_interactive": (0.01, 0.01, 0.01),
}

# Verification

QUADRATURE_RTOL = _env_float("LANDAU_QUADRATURE_RTOL", 1e-9)
PROBE_SAMPLES = _env_int("LANDAU_PROBE_SAMPLES", 200)
PROBE_DECAY = _env_float("LANDAU_PROBE_DECAY", 4.0)
# Largest relative change of a probe statistic between the two refinement grids.
PROBE_REFINEMENT_TOL = _env_float("LANDAU_PROBE_REFINEMENT_TOL", 0.3)
APPENDIX_GROWTH_TOL = _env_float("LANDAU_APPENDIX_GROWTH_TOL", 0.01)

# Runtime

WORKERS = _env_int("LANDAU_WORKERS", 1)
SEED = _env_int("LANDAU_SEED", 20240601)
OUTPUT_DIR = Path(getenv("LANDAU_OUTPUT_DIR", str(BASE_DIR / "results")))
CACHE_DIR = Path(getenv("LANDAU_CACHE_DIR", str(BASE_DIR / ".cache")))

LOG_FORMAT = (
    "{time:YYYY-MM-DD at HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
)

LOGURU_LOGGING = {
    "handlers": [
        {
            "sink": sys.stderr,
            "level": getenv("LANDAU_LOG_LEVEL", "INFO"),
            "format": LOG_FORMAT,
        },
        {
            "sink": BASE_DIR / "logs/debug.log",
            "level": "DEBUG",
            "filter": lambda record: record["level"].no <= logger.level("WARNING").no,
            "format": LOG_FORMAT,
            "rotation": "10 MB",
            "retention": "30 days",
            "compression": "zip",
        },
        {
            "sink": BASE_DIR / "logs/error.log",
            "level": "ERROR",
            "format": LOG_FORMAT,
            "rotation": "10 MB",
            "retention": "30 days",
            "compression": "zip",
            "backtrace": True,
            "diagnose": True,
        },
    ],
}
logger.configure(**LOGURU_LOGGING)

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "handlers": {
        "loguru": {
            "class": "interceptor.InterceptHandler",
        },
    },
    "root": {
        "level": "DEBUG",
        "handlers": ["loguru"],
    },
}
logging.config.dictConfig(LOGGING)
logging.captureWarnings(True)
