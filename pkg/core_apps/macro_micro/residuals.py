from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from loguru import logger

from core_apps.collision.operators import CollisionOperator, get_operator
from core_apps.common.errors import GridError, GridMismatchError
from core_apps.common.renderers import CSVRenderer
from core_apps.field.utils import ModeDerivative, SlabDerivative
from core_apps.macro_micro.models import ResidualReport
from core_apps.macro_micro.utils import (
    get_projector,
    lambda_weights,
    species_moment,
    theta_weights,
)
from core_apps.velocity_space.models import VelocityGrid
from core_apps.velocity_space.utils import sqrt_maxwellian

Derivative = Union[ModeDerivative, SlabDerivative]
RESIDUAL_HEADER = ("equation", "time", "residual", "residual_w4")
SPECIES = (("+", 1.0), ("-", -1.0))
OFF_DIAGONAL = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True, eq=False)
class MomentTrajectory:
    """Stored solution samples.

    f and g have shape (T, S, 2, n, n, n) and E has shape (T, S, 3), where S
    counts spatial sites (one for a single Fourier mode).
    """

    times: np.ndarray
    f: np.ndarray
    E: np.ndarray
    grid: VelocityGrid
    derivative: Derivative
    g: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.size < 3:
            raise GridError(f"Residuals need at least 3 time samples, got {times.size}")
        steps = np.diff(times)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
            raise GridError("Residuals need a uniform, increasing time grid")
        expected = (times.size,) + self.f.shape[1:2] + (2,) + self.grid.shape
        if self.f.shape != expected:
            raise GridMismatchError(f"Trajectory shape {self.f.shape}, expected {expected}")
        if self.E.shape != self.f.shape[:2] + (3,):
            raise GridMismatchError(f"Field shape {self.E.shape} does not match {self.f.shape}")
        if self.g is not None and self.g.shape != self.f.shape:
            raise GridMismatchError(f"Source shape {self.g.shape} does not match {self.f.shape}")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


class _Moments:
    """Velocity moments of a trajectory, with time on axis -2 and space on axis -1."""

    def __init__(self, traj: MomentTrajectory, operator: CollisionOperator) -> None:
        self.traj = traj
        self.grid = traj.grid
        self.D = traj.derivative
        projector = get_projector(traj.grid)
        coefficients = projector.coefficients(traj.f)
        self.a = coefficients[:2]
        self.b = coefficients[2:5]
        self.c = coefficients[5]
        self.r = projector.micro(traj.f)
        self.f = traj.f
        self.Lf = operator.linearized_L(traj.f)
        self.g = np.zeros_like(traj.f) if traj.g is None else traj.g
        self.E = np.moveaxis(traj.E, -1, 0)
        self.root = sqrt_maxwellian(self.grid)
        self.v = self.grid.mesh

    # time handling

    def ddt(self, q: np.ndarray) -> np.ndarray:
        return (q[..., 2:, :] - q[..., :-2, :]) / (2.0 * self.traj.dt)

    @staticmethod
    def mid(q: np.ndarray) -> np.ndarray:
        return q[..., 1:-1, :]

    # spatial derivatives

    def partial(self, q: np.ndarray, axis: int) -> np.ndarray:
        return self.D.partial(q, axis)

    def div(self, vector: np.ndarray) -> np.ndarray:
        return sum(self.partial(vector[k], k) for k in range(3))

    # moments

    def of(self, weight: np.ndarray, values: np.ndarray) -> np.ndarray:
        """<weight, values_s> per species, shape (2, T, S)."""
        return species_moment(values, weight, self.grid)

    def flux(self, weight: np.ndarray, values: np.ndarray) -> np.ndarray:
        """<v weight, values_s> per component, shape (3, 2, T, S)."""
        return np.stack([self.of(self.v[k] * weight, values) for k in range(3)])

    def of_l(self, weight: np.ndarray) -> np.ndarray:
        """<weight, l_s> with l = -v . grad_x (I - P) f - L f."""
        return -self.div(self.flux(weight, self.r)) - self.of(weight, self.Lf)

    def pair(self, test: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Sum over species of <test_s, values_s>, shape (T, S)."""
        return np.tensordot(values, test, axes=([-4, -3, -2, -1], [0, 1, 2, 3])) * (
            self.grid.weight
        )


def _rms(defect: np.ndarray) -> np.ndarray:
    """Root mean square over every axis except time (axis -2)."""
    squared = np.abs(defect) ** 2
    squared = np.moveaxis(squared, -2, 0).reshape(squared.shape[-2], -1)
    return np.sqrt(squared.mean(axis=1))


def _species_equations(m: _Moments) -> dict[str, tuple[np.ndarray, list[np.ndarray]]]:
    """Literal defects of the per-species moment equations and their test functions."""
    root, v, grid = m.root, m.v, m.grid
    r, g, Lf = m.r, m.g, m.Lf
    energy = (grid.speed_squared - 3.0) * root
    theta = theta_weights(grid)
    literal = theta_weights(grid, literal=True)
    lam = lambda_weights(grid)
    div_b = m.div(m.b)

    flux_root = m.flux(root, r)
    first = np.stack([m.of(v[i] * root, r) for i in range(3)])
    second = np.stack([m.flux(v[i] * root, r) for i in range(3)])
    g_minus_L = g - Lf

    out = {}
    for s, (label, sign) in enumerate(SPECIES):
        tests = []

        def species_test(weight):
            test = np.zeros((2,) + grid.shape)
            test[s] = weight
            return test

        m0 = (
            m.ddt(m.a[s])
            + m.mid(div_b + m.div(flux_root[:, s]))
            - m.mid(m.of(root, g)[s])
        )
        out[f"m0{label}"] = (m0, [species_test(root)])

        m1 = np.stack(
            [
                m.ddt(m.b[i] + first[i, s])
                + m.mid(
                    m.partial(m.a[s] + 2.0 * m.c, i)
                    - 2.0 * sign * m.E[i]
                    + m.div(second[i][:, s])
                )
                - m.mid(m.of(v[i] * root, g_minus_L)[s])
                for i in range(3)
            ]
        )
        out[f"m1{label}"] = (m1, [species_test(v[i] * root) for i in range(3)])

        m2 = (
            m.ddt(m.c + m.of(energy, r)[s] / 6.0)
            + m.mid(div_b / 3.0 + m.div(m.flux(energy, r)[:, s]) / 6.0)
            - m.mid(m.of(energy, g_minus_L)[s] / 6.0)
        )
        out[f"m2{label}"] = (m2, [species_test(energy / 6.0)])

        m2ii = np.stack(
            [
                m.ddt(m.of(theta[i, i], r)[s] + 2.0 * m.c)
                + m.mid(2.0 * m.partial(m.b[i], i))
                - m.mid(m.of_l(theta[i, i])[s] + m.of(theta[i, i], g)[s])
                for i in range(3)
            ]
        )
        out[f"m2ii{label}"] = (m2ii, [species_test(theta[i, i]) for i in range(3)])

        m2ij = np.stack(
            [
                m.ddt(m.of(literal[i, j], r)[s])
                + m.mid(
                    m.partial(m.b[i], j)
                    + m.partial(m.b[j], i)
                    + m.div(flux_root[:, s])
                )
                - m.mid(
                    m.of_l(literal[i, j])[s]
                    + m.of(literal[i, j], g)[s]
                    + m.of(root, g)[s]
                )
                for i, j in OFF_DIAGONAL
            ]
        )
        out[f"m2ij{label}"] = (
            m2ij,
            [species_test(literal[i, j] + root) for i, j in OFF_DIAGONAL],
        )

        m3 = np.stack(
            [
                m.ddt(m.of(lam[i], r)[s])
                + m.mid(m.partial(m.c, i))
                - m.mid(m.of_l(lam[i])[s] + m.of(lam[i], g)[s])
                for i in range(3)
            ]
        )
        out[f"m3{label}"] = (m3, [species_test(lam[i]) for i in range(3)])
    return out


def _combined_equations(m: _Moments) -> dict[str, tuple[np.ndarray, list[np.ndarray]]]:
    """Averaged and difference systems plus the continuity equation."""
    root, v, grid = m.root, m.v, m.grid
    r, g, Lf = m.r, m.g, m.Lf
    energy = (grid.speed_squared - 3.0) * root
    theta = theta_weights(grid)
    lam = lambda_weights(grid)
    both = np.ones(2)[:, None, None, None]
    q1 = np.array([1.0, -1.0])[:, None, None, None]

    def total(moment: np.ndarray) -> np.ndarray:
        return moment[0] + moment[1]

    def difference(moment: np.ndarray) -> np.ndarray:
        return moment[0] - moment[1]

    a_mean = 0.5 * (m.a[0] + m.a[1])
    rho = m.a[0] - m.a[1]
    j = np.stack([difference(m.of(v[i] * root, m.f)) for i in range(3)])
    div_b = m.div(m.b)
    g_minus_L = g - Lf

    macro_a = m.ddt(a_mean) + m.mid(div_b) - m.mid(0.5 * total(m.of(root, g)))
    macro_b = np.stack(
        [
            m.ddt(m.b[i])
            + m.mid(
                m.partial(a_mean + 2.0 * m.c, i)
                + 0.5 * sum(m.partial(total(m.of(theta[i, k], r)), k) for k in range(3))
            )
            - m.mid(0.5 * total(m.of(v[i] * root, g_minus_L)))
            for i in range(3)
        ]
    )
    macro_c = (
        m.ddt(m.c)
        + m.mid(
            div_b / 3.0
            + 5.0 / 6.0 * sum(m.partial(total(m.of(lam[i], r)), i) for i in range(3))
        )
        - m.mid(total(m.of(energy, g_minus_L)) / 12.0)
    )
    macro1 = np.concatenate([macro_a[None], macro_b, macro_c[None]])
    macro1_tests = (
        [0.5 * root * both]
        + [0.5 * v[i] * root * both for i in range(3)]
        + [energy * both / 12.0]
    )

    pairs = [(i, k) for i in range(3) for k in range(i, 3)]
    macro2_theta = [
        m.ddt(0.5 * total(m.of(theta[i, k], r)) + 2.0 * m.c * float(i == k))
        + m.mid(m.partial(m.b[k], i) + m.partial(m.b[i], k))
        - m.mid(0.5 * total(m.of_l(theta[i, k])) + 0.5 * total(m.of(theta[i, k], g)))
        for i, k in pairs
    ]
    macro2_lambda = [
        m.ddt(0.5 * total(m.of(lam[i], r)))
        + m.mid(m.partial(m.c, i))
        - m.mid(0.5 * total(m.of_l(lam[i])) + 0.5 * total(m.of(lam[i], g)))
        for i in range(3)
    ]
    macro2 = np.stack(macro2_theta + macro2_lambda)
    macro2_tests = [0.5 * theta[i, k] * both for i, k in pairs] + [
        0.5 * lam[i] * both for i in range(3)
    ]

    continuity = m.ddt(rho) + m.mid(m.div(j))
    m0_diff = continuity - m.mid(difference(m.of(root, g)))
    m1_diff = np.stack(
        [
            m.ddt(j[i])
            + m.mid(
                m.partial(rho, i)
                - 4.0 * m.E[i]
                + sum(m.partial(difference(m.of(theta[k, i], r)), k) for k in range(3))
            )
            - m.mid(difference(m.of(v[i] * root, g_minus_L)))
            for i in range(3)
        ]
    )
    return {
        "macro1": (macro1, macro1_tests),
        "macro2": (macro2, macro2_tests),
        "m0_diff": (m0_diff, [root * q1]),
        "m1_diff": (m1_diff, [v[i] * root * q1 for i in range(3)]),
        "continuity": (continuity, [root * q1]),
    }


def _weighted_defect(m: _Moments, test: np.ndarray) -> np.ndarray:
    """<test, d_t f + v . grad_x f - 2 (E . v) sqrt(mu) q_1 + L f - g> at interior times."""
    test = test * m.grid.bracket**-4.0
    transport = sum(m.partial(m.pair(m.v[k] * test, m.f), k) for k in range(3))
    q1 = np.array([1.0, -1.0])[:, None, None, None]
    field = sum(
        m.E[k] * float(np.sum(test * m.v[k] * m.root * q1) * m.grid.weight)
        for k in range(3)
    )
    rest = transport - 2.0 * field + m.pair(test, m.Lf) - m.pair(test, m.g)
    return m.ddt(m.pair(test, m.f)) + m.mid(rest)


def moment_residuals(
    traj: MomentTrajectory, operator: Optional[CollisionOperator] = None
) -> ResidualReport:
    operator = get_operator(traj.grid) if operator is None else operator
    moments = _Moments(traj, operator)
    equations = {**_species_equations(moments), **_combined_equations(moments)}

    residuals, weighted = {}, {}
    for name, (defect, tests) in equations.items():
        residuals[name] = _rms(defect)
        weighted[name] = _rms(np.stack([_weighted_defect(moments, t) for t in tests]))

    # the m2ij source term vanishes for microscopic sources; reported, not dropped
    source = moments.of(moments.root, moments.g)
    residuals["m2ij_source"] = _rms(moments.mid(source))
    residuals["compatibility"] = _rms(moments.mid(source[0] - source[1]))

    report = ResidualReport(
        times=np.asarray(traj.times)[1:-1], residuals=residuals, weighted=weighted
    )
    logger.debug(
        f"Moment residuals over {len(report.times)} interior samples: "
        f"worst {report.worst():.3e}"
    )
    return report


def write_residual_csv(report: ResidualReport, target: Path) -> Path:
    return CSVRenderer(RESIDUAL_HEADER).write(report.rows(), target)
