from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Optional

import numpy as np

from config import settings
from core_apps.common.errors import GridError, GridMismatchError, LyapunovConfigError
from core_apps.common.models import SerializableModel
from core_apps.field.models import FieldState
from core_apps.field.utils import ModeDerivative, solve_poisson
from core_apps.macro_micro.residuals import MomentTrajectory
from core_apps.macro_micro.utils import species_moment
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import sqrt_maxwellian


def _charge(f_hat: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    density = species_moment(f_hat, sqrt_maxwellian(grid), grid)
    return density[0] - density[1]


@dataclass(frozen=True, eq=False)
class ModeState:
    """One Fourier mode of the linearized system; phi_hat is always recomputed from f_hat."""

    f_hat: np.ndarray
    k: np.ndarray
    grid: VelocityGrid

    def __post_init__(self) -> None:
        object.__setattr__(self, "f_hat", np.asarray(self.f_hat, dtype=complex))
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float))
        if self.f_hat.shape != (2,) + self.grid.shape:
            raise GridMismatchError(
                f"Mode state shape {self.f_hat.shape}, expected {(2,) + self.grid.shape}"
            )
        if self.k.shape != (3,):
            raise GridError(f"k must be a 3-vector, got shape {self.k.shape}")

    @property
    def k_norm(self) -> float:
        return float(np.linalg.norm(self.k))

    @cached_property
    def field(self) -> FieldState:
        return solve_poisson(_charge(self.f_hat, self.grid), self.k)

    @property
    def phi_hat(self) -> complex:
        return complex(self.field.phi_hat)

    @property
    def base_energy(self) -> float:
        """|f_hat|_2^2 + 2 |k|^2 |phi_hat|^2."""
        kinetic = float(np.sum(np.abs(self.f_hat) ** 2) * self.grid.weight)
        return kinetic + float(self.field.energy_term())

    def with_values(self, f_hat: np.ndarray) -> "ModeState":
        return replace(self, f_hat=f_hat)


@dataclass(frozen=True)
class LyapunovConfig(SerializableModel):
    kappa1: float
    kappa2: float
    kappa3: float
    kappa4: float = 0.0
    kappa5: float = 0.0
    ell: float = 0.0
    lambda_fit: Optional[float] = None

    def __post_init__(self) -> None:
        kappas = (self.kappa1, self.kappa2, self.kappa3)
        if any(not np.isfinite(k) or k <= 0.0 for k in kappas):
            raise LyapunovConfigError(f"kappa1..kappa3 must be positive, got {kappas}")
        if self.kappa4 < 0.0 or self.kappa5 < 0.0:
            raise LyapunovConfigError(
                f"kappa4 and kappa5 must be nonnegative, got {self.kappa4}, {self.kappa5}"
            )
        if not self.kappa2 <= self.kappa1 / 10.0 <= 0.01:
            raise LyapunovConfigError(
                f"Need kappa2 <= kappa1 / 10 <= 1/100, got kappa1={self.kappa1}, "
                f"kappa2={self.kappa2}"
            )

    @classmethod
    def from_settings(cls, **overrides) -> "LyapunovConfig":
        values = dict(settings.LYAPUNOV_DEFAULTS)
        values.update(overrides)
        return cls(**values)

    @property
    def is_unweighted(self) -> bool:
        return self.ell == 0.0 and self.kappa4 == 0.0 and self.kappa5 == 0.0

    def shifted(self, delta: float) -> "LyapunovConfig":
        return replace(self, ell=self.ell + delta)


@dataclass(frozen=True, eq=False)
class ModeTrajectory:
    times: np.ndarray
    f_hat: np.ndarray
    k: np.ndarray
    grid: VelocityGrid
    g_hat: Optional[np.ndarray] = None
    scheme: str = "implicit"

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise GridError("Trajectory times must be strictly increasing")
        if self.f_hat.shape != (len(times), 2) + self.grid.shape:
            raise GridMismatchError(
                f"Trajectory shape {self.f_hat.shape} does not match {len(times)} samples"
            )

    def __len__(self) -> int:
        return len(self.times)

    def states(self) -> Iterator[ModeState]:
        for values in self.f_hat:
            yield ModeState(f_hat=values, k=self.k, grid=self.grid)

    @property
    def final(self) -> ModeState:
        return ModeState(f_hat=self.f_hat[-1], k=self.k, grid=self.grid)

    @cached_property
    def phi_hat(self) -> np.ndarray:
        return np.array([state.phi_hat for state in self.states()])

    def base_energy(self) -> np.ndarray:
        return np.array([state.base_energy for state in self.states()])

    def to_moment_trajectory(self) -> MomentTrajectory:
        """View as a single-site trajectory for the moment residual checks."""
        E = -1j * self.k[None, :] * self.phi_hat[:, None]
        g = None if self.g_hat is None else self.g_hat[:, None]
        return MomentTrajectory(
            times=self.times,
            f=self.f_hat[:, None],
            E=E[:, None, :],
            grid=self.grid,
            derivative=ModeDerivative(self.k),
            g=g,
        )


@dataclass(frozen=True)
class InequalityFit(SerializableModel):
    """Fitted constant of a differential inequality along a trajectory.

    constant is the largest dissipation constant (or the smallest right-side
    constant, when larger_is_better is False) for which the inequality holds at
    the required fraction of interior samples.
    """

    name: str
    constant: float
    satisfied_fraction: float
    violations_at_half: int
    samples: int
    k_norm: float
    larger_is_better: bool = True

    @property
    def rate(self) -> float:
        """Decay rate lambda (1 ^ |k|^2) implied by the fitted constant."""
        return self.constant * min(1.0, self.k_norm**2)


@dataclass(frozen=True, eq=False)
class DecayReport(SerializableModel):
    times: np.ndarray
    values: np.ndarray
    exponents: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    shells: np.ndarray = field(default_factory=lambda: np.zeros(0))
    contributions: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), repr=False)
    flags: tuple = ()
    label: str = "synth"

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise GridError("DecayReport times must be strictly increasing")
        if np.shape(self.values) != times.shape:
            raise GridMismatchError(
                f"{np.shape(self.values)} values for {times.shape} times"
            )

    def rows(self) -> list[tuple]:
        slope = self.exponents.get("slope", np.nan)
        return [
            (float(t), self.label, float(value), float(slope))
            for t, value in zip(self.times, self.values)
        ]


@dataclass(frozen=True)
class ShellSpec(SerializableModel):
    """Log-uniform frequency shells on [k_min, k_max] along the direction e_1."""

    count: int
    k_min: float
    k_max: float

    def __post_init__(self) -> None:
        if self.count < 2:
            raise GridError(f"Need at least two shells, got {self.count}")
        if not 0.0 < self.k_min < self.k_max:
            raise GridError(f"Need 0 < k_min < k_max, got {self.k_min}, {self.k_max}")

    @classmethod
    def from_settings(cls, **overrides) -> "ShellSpec":
        values = {
            "count": settings.SHELL_COUNT,
            "k_min": settings.SHELL_K_MIN,
            "k_max": settings.SHELL_K_MAX,
        }
        values.update(overrides)
        return cls(**values)

    @property
    def edges(self) -> np.ndarray:
        return np.geomspace(self.k_min, self.k_max, self.count + 1)

    @property
    def radii(self) -> np.ndarray:
        edges = self.edges
        return np.sqrt(edges[:-1] * edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


@dataclass(frozen=True, eq=False)
class ShellSweep:
    """Per-shell energies: energies[s, i] is the mode energy of shell s at times[i]."""

    radii: np.ndarray
    widths: np.ndarray
    times: np.ndarray
    energies: np.ndarray
    profile: str = "gaussian"
    ell: float = 0.0

    def __post_init__(self) -> None:
        if self.energies.shape != (len(self.radii), len(self.times)):
            raise GridMismatchError(
                f"Energies {self.energies.shape} for {len(self.radii)} shells "
                f"and {len(self.times)} times"
            )
        if len(self.widths) != len(self.radii):
            raise GridMismatchError("Shell radii and widths differ in length")
