from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Optional

import numpy as np

from config import settings
from core_apps.common.errors import GridError, GridMismatchError, SolverError
from core_apps.common.models import SerializableModel
from core_apps.field.models import SlabGeometry
from core_apps.field.utils import SlabDerivative, solve_poisson_slab
from core_apps.linear_decay.models import InequalityFit
from core_apps.macro_micro.residuals import MomentTrajectory
from core_apps.macro_micro.utils import species_moment
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import maxwellian, sqrt_maxwellian

STEPPER_MODES = ("imex", "iteration")
# Ledger entries that are norms or sums of norms.
NONNEGATIVE = (
    "energy_2_2",
    "energy_3_3",
    "dissipation_3_3",
    "dissipation_weightless_3_3",
    "zeta",
    "zeta_h",
    "zeta_low",
    "zeta_high",
    "zeta_h_low",
    "zeta_h_high",
    "zeta_inf",
    "phi_t_sup",
    "grad_phi_sup",
)


@dataclass(frozen=True)
class SlabGrid:
    """Periodic x_1 interval times the velocity box; f lives on (n_x, 2, n, n, n)."""

    geometry: SlabGeometry = field(default_factory=SlabGeometry)
    velocity: VelocityGrid = field(
        default_factory=lambda: VelocityGrid(n_per_axis=settings.SLAB_N_PER_AXIS)
    )

    def __post_init__(self) -> None:
        n_x = self.geometry.n_x
        if n_x & (n_x - 1):
            raise GridError(f"n_x must be a power of two, got {n_x}")

    @classmethod
    def build(
        cls,
        n_x: Optional[int] = None,
        length: Optional[float] = None,
        n_per_axis: Optional[int] = None,
        v_max: Optional[float] = None,
    ) -> "SlabGrid":
        geometry = SlabGeometry(
            n_x=settings.SLAB_N_X if n_x is None else n_x,
            length=settings.SLAB_LENGTH if length is None else length,
        )
        velocity = VelocityGrid(
            v_max=settings.V_MAX if v_max is None else v_max,
            n_per_axis=settings.SLAB_N_PER_AXIS if n_per_axis is None else n_per_axis,
        )
        return cls(geometry=geometry, velocity=velocity)

    @property
    def n_x(self) -> int:
        return self.geometry.n_x

    @property
    def length(self) -> float:
        return self.geometry.length

    @property
    def x(self) -> np.ndarray:
        return self.geometry.x

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.geometry.wavenumbers

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_x, 2) + self.velocity.shape

    @cached_property
    def derivative(self) -> SlabDerivative:
        return SlabDerivative(self.geometry)

    def x_derivative(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        """Spectral d^order/dx_1^order of an array whose first axis is the site axis."""
        moved = np.moveaxis(values, 0, -1)
        for _ in range(order):
            moved = self.derivative.partial(moved, 0)
        return np.moveaxis(moved, -1, 0)

    def integrate(self, values: np.ndarray) -> float:
        """Sum over sites times dx; x_2 and x_3 are taken per unit cross-section."""
        return float(np.sum(values) * self.geometry.dx)


@dataclass(frozen=True, eq=False)
class SimState:
    """Perturbation f on the slab at time t; phi and E_1 are slaved to f."""

    f: np.ndarray
    grid: SlabGrid
    t: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        if self.f.shape != self.grid.shape:
            raise GridMismatchError(f"State shape {self.f.shape}, expected {self.grid.shape}")
        if not np.all(np.isfinite(self.f)):
            raise SolverError(f"Non-finite values in the state at t={self.t:g}")

    @classmethod
    def zero(cls, grid: SlabGrid, t: float = 0.0) -> "SimState":
        return cls(f=np.zeros(grid.shape), grid=grid, t=t)

    @cached_property
    def densities(self) -> np.ndarray:
        """<sqrt(mu), f_s> per species and site, shape (2, n_x)."""
        velocity = self.grid.velocity
        return species_moment(self.f, sqrt_maxwellian(velocity), velocity)

    @property
    def charge(self) -> np.ndarray:
        return self.densities[0] - self.densities[1]

    @cached_property
    def potential(self) -> tuple[np.ndarray, np.ndarray]:
        return solve_poisson_slab(self.charge, self.grid.geometry)

    @property
    def phi(self) -> np.ndarray:
        return self.potential[0]

    @property
    def E1(self) -> np.ndarray:
        return self.potential[1]

    @property
    def F(self) -> np.ndarray:
        """Full densities mu + sqrt(mu) f_s."""
        velocity = self.grid.velocity
        return maxwellian(velocity) + sqrt_maxwellian(velocity) * self.f

    def min_density(self) -> float:
        return float(self.F.min())

    def poisson_residual(self) -> float:
        """sup |-phi'' - rho| on the slab."""
        k = self.grid.wavenumbers
        minus_second = np.fft.ifft(k * k * np.fft.fft(self.phi)).real
        rho = self.charge - self.charge.mean()
        return float(np.max(np.abs(minus_second - rho)))

    def with_values(self, f: np.ndarray, t: float) -> "SimState":
        return replace(self, f=f, t=t)


@dataclass(eq=False)
class EnergyLedger:
    """Per-sample energy, dissipation and zeta values along a run."""

    times: list = field(default_factory=list)
    values: dict = field(default_factory=dict)

    def record(self, t: float, entries: dict[str, float]) -> None:
        for name in NONNEGATIVE:
            value = entries.get(name)
            if value is not None and value < -1e-14 * (1.0 + abs(value)):
                raise SolverError(f"Ledger entry {name} is negative ({value:.3e}) at t={t:g}")
        if self.times and set(entries) != set(self.values):
            raise GridMismatchError("Ledger entries changed between samples")
        self.times.append(float(t))
        for name, value in entries.items():
            self.values.setdefault(name, []).append(float(value))

    def __len__(self) -> int:
        return len(self.times)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def series(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.values[name], dtype=float)
        except KeyError:
            raise GridError(f"Ledger has no entry {name!r}") from None

    @property
    def names(self) -> list[str]:
        return sorted(self.values)

    def rows(self) -> list[tuple]:
        return [
            (t,) + tuple(self.values[name][index] for name in self.names)
            for index, t in enumerate(self.times)
        ]

    def header(self) -> tuple[str, ...]:
        return ("time",) + tuple(self.names)

    def add_running_sup(self) -> None:
        """zeta_inf(t) = sup_{s <= t} (1 + s)^{3/2} zeta(s)."""
        if "zeta" not in self.values:
            return
        times = np.asarray(self.times)
        scaled = (1.0 + times) ** 1.5 * self.series("zeta")
        self.values["zeta_inf"] = list(np.maximum.accumulate(scaled))


@dataclass(frozen=True, eq=False)
class SimTrajectory:
    times: np.ndarray
    f: np.ndarray
    grid: SlabGrid
    mode: str = "imex"
    ledger: EnergyLedger = field(default_factory=EnergyLedger)

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise GridError("Trajectory times must be strictly increasing")
        if self.f.shape != (len(times),) + self.grid.shape:
            raise GridMismatchError(
                f"Trajectory shape {self.f.shape} does not match {len(times)} samples"
            )
        if self.mode not in STEPPER_MODES:
            raise GridError(f"Unknown stepper mode {self.mode!r}")

    def __len__(self) -> int:
        return len(self.times)

    def states(self) -> Iterator[SimState]:
        for t, values in zip(self.times, self.f):
            yield SimState(f=values, grid=self.grid, t=float(t))

    @property
    def final(self) -> SimState:
        return SimState(f=self.f[-1], grid=self.grid, t=float(self.times[-1]))

    def to_moment_trajectory(self, sources: Optional[np.ndarray] = None) -> MomentTrajectory:
        """Site-resolved view for the moment residual checks; g is the nonlinear source."""
        E = np.zeros((len(self),) + (self.grid.n_x, 3))
        E[..., 0] = [state.E1 for state in self.states()]
        return MomentTrajectory(
            times=self.times,
            f=self.f,
            E=E,
            grid=self.grid.velocity,
            derivative=self.grid.derivative,
            g=sources,
        )


@dataclass(frozen=True)
class ZetaValues(SerializableModel):
    zeta: float
    zeta_h: float
    zeta_low: float
    zeta_high: float
    zeta_h_low: float
    zeta_h_high: float

    def as_entries(self) -> dict[str, float]:
        return self.as_dict()


@dataclass(frozen=True, eq=False)
class InequalityReport(SerializableModel):
    fits: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)
    flags: tuple = ()

    @property
    def sign_pattern(self) -> dict[str, str]:
        return {
            name: "holds" if fit.satisfied_fraction >= 0.99 else "fails"
            for name, fit in self.fits.items()
        }

    def rows(self) -> list[tuple]:
        return [
            (name, fit.constant, fit.satisfied_fraction, fit.violations_at_half, fit.samples)
            for name, fit in sorted(self.fits.items())
        ]

    def worst(self) -> Optional[InequalityFit]:
        if not self.fits:
            return None
        return min(self.fits.values(), key=lambda fit: fit.satisfied_fraction)
