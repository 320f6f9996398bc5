from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core_apps.common.errors import GridError
from core_apps.common.models import SerializableModel
from core_apps.velocity_space.models import VelocityGrid

VARIANTS = ("A1", "A2")


@dataclass(frozen=True)
class DecayFit(SerializableModel):
    """Least-squares slope of log(value) against log(1 + t)."""

    slope: float
    stderr: float
    intercept: float
    points: int
    window: tuple[float, float]


@dataclass(frozen=True, eq=False)
class IntegralCase(SerializableModel):
    p: float
    lam: float
    mu: float
    times: np.ndarray = field(
        default_factory=lambda: np.logspace(-2.0, 12.0, 141), repr=False
    )

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise GridError(f"p must lie in (0, 1], got {self.p}")
        if self.lam <= 0.0:
            raise GridError(f"lambda must be positive, got {self.lam}")
        if self.mu < 0.0:
            raise GridError(f"mu must be nonnegative, got {self.mu}")
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or np.any(times <= 0.0) or np.any(np.diff(times) <= 0.0):
            raise GridError("Integral times must be positive and increasing")

    @property
    def label(self) -> str:
        return f"p={self.p:g},lambda={self.lam:g},mu={self.mu:g}"


@dataclass(frozen=True, eq=False)
class IntegralResult(SerializableModel):
    case: IntegralCase
    variant: str
    values: np.ndarray
    upper_ratio: np.ndarray
    lower_ratio: np.ndarray
    running_sup: np.ndarray

    @property
    def last_decade_growth(self) -> float:
        """Relative increase of the running supremum over the last decade of t."""
        times = self.case.times
        start = np.searchsorted(times, times[-1] / 10.0)
        before = self.running_sup[max(start - 1, 0)]
        return float(self.running_sup[-1] / before - 1.0)

    @property
    def lower_bound_holds(self) -> bool:
        mask = self.case.times >= 1.0
        if self.variant != "A1" or not np.any(mask):
            return True
        return bool(np.all(self.lower_ratio[mask] >= 1.0 - 1e-9))


@dataclass(frozen=True, eq=False)
class ProbeSample:
    """Three smooth pairs and the derivative orders they are probed at."""

    index: int
    seed: int
    grid: VelocityGrid
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    alpha: tuple[int, int, int] = (0, 0, 0)
    beta: tuple[int, int, int] = (0, 0, 0)
    ell: float = 0.0


@dataclass
class ProbeReport(SerializableModel):
    name: str
    seed: int
    n_per_axis: int
    v_max: float
    samples_used: int
    samples_skipped: int
    maximum: float
    minimum: float
    median: float
    ratios: list = field(default_factory=list)
    refinement: Optional[dict] = None
