from typing import Callable, Optional

import numpy as np
from loguru import logger
from numpy.polynomial import legendre

from config import settings
from core_apps.common.errors import GridError, QuadratureError
from core_apps.verification.models import VARIANTS, IntegralCase, IntegralResult

GAUSS_NODES = 16
MAX_LEVEL = 14
_NODES, _WEIGHTS = legendre.leggauss(GAUSS_NODES)


def _composite(
    func: Callable[[np.ndarray], np.ndarray], a: float, b: float, panels: int
) -> float:
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)[:, None]
    nodes = 0.5 * (edges[1:] + edges[:-1])[:, None] + half * _NODES
    return float(np.sum(half * _WEIGHTS * func(nodes)))


def gauss_panels(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    rtol: Optional[float] = None,
    max_level: int = MAX_LEVEL,
) -> float:
    """Composite Gauss-Legendre on [a, b], doubling the panels until the value settles."""
    rtol = settings.QUADRATURE_RTOL if rtol is None else rtol
    if b <= a:
        return 0.0
    previous = _composite(func, a, b, 1)
    for level in range(1, max_level + 1):
        current = _composite(func, a, b, 2**level)
        if abs(current - previous) <= rtol * abs(current) or current == previous:
            return current
        previous = current
    raise QuadratureError(
        f"Gauss panels on [{a:g}, {b:g}] did not settle after {2**max_level} panels"
    )


def _integrand(
    case: IntegralCase, variant: str, top: float
) -> Callable[[np.ndarray], np.ndarray]:
    """Integrand in w = t^p - s^p, the distance to the upper end in u = s^p."""
    p, lam, mu = case.p, case.lam, case.mu

    def func(w: np.ndarray) -> np.ndarray:
        u = np.maximum(top - w, 0.0)
        s = u ** (1.0 / p)
        values = np.exp(-lam * w) * (1.0 + s) ** -mu / p
        if variant == "A1":
            values = values * u ** (1.0 / p - 1.0)
        return values

    return func


def _breakpoints(case: IntegralCase, t: float) -> np.ndarray:
    """Kink at s = t/2 plus log-spaced cuts on the scale 1 / lambda of the peak at s = t."""
    top = t**case.p
    cuts = [0.0, top, top - (0.5 * t) ** case.p]
    width = 1.0 / case.lam
    while width < top:
        cuts.append(width)
        width *= 2.0
    return np.unique(np.clip(cuts, 0.0, top))


def integral_value(case: IntegralCase, variant: str, t: float) -> float:
    if variant not in VARIANTS:
        raise GridError(f"Unknown appendix variant {variant!r}; expected one of {VARIANTS}")
    func = _integrand(case, variant, t**case.p)
    cuts = _breakpoints(case, t)
    return sum(gauss_panels(func, a, b) for a, b in zip(cuts[:-1], cuts[1:]))


def upper_envelope(case: IntegralCase, variant: str, times: np.ndarray) -> np.ndarray:
    """(1 + t)^(1 - p - mu) for the plain variant, (1 + t)^(-mu) with the s^(p-1) factor."""
    exponent = -case.mu + (1.0 - case.p if variant == "A1" else 0.0)
    return (1.0 + times) ** exponent


def lower_bound(case: IntegralCase, times: np.ndarray, literal: bool = False) -> np.ndarray:
    """Lower bound from the half interval [t/2, t], defined for t >= 1.

    The prefactor is 4^(p - 1); literal=True uses 4^(1 - p), which overshoots the
    integral once p < 1.
    """
    p, lam = case.p, case.lam
    prefactor = 4.0 ** ((1.0 - p) if literal else (p - 1.0)) / (lam * p)
    values = (
        prefactor
        * (1.0 + times) ** (1.0 - p - case.mu)
        * -np.expm1(-lam * times**p * (1.0 - 2.0**-p))
    )
    return np.where(times >= 1.0, values, np.nan)


def closed_form(case: IntegralCase, variant: str) -> Optional[np.ndarray]:
    """Exact values where an antiderivative exists: p = 1 without decay, or mu = 0 for A2."""
    times = case.times
    if variant == "A2" and case.mu == 0.0:
        return -np.expm1(-case.lam * times**case.p) / (case.lam * case.p)
    if variant == "A1" and case.p == 1.0 and case.mu == 0.0:
        return -np.expm1(-case.lam * times) / case.lam
    return None


def appendix_integral(case: IntegralCase, variant: str = "A1") -> IntegralResult:
    times = case.times
    values = np.array([integral_value(case, variant, float(t)) for t in times])
    upper_ratio = values / upper_envelope(case, variant, times)
    if variant == "A1":
        lower_ratio = values / lower_bound(case, times)
    else:
        lower_ratio = np.full(times.shape, np.nan)
    result = IntegralResult(
        case=case,
        variant=variant,
        values=values,
        upper_ratio=upper_ratio,
        lower_ratio=lower_ratio,
        running_sup=np.maximum.accumulate(upper_ratio),
    )
    logger.debug(
        f"{variant} {case.label}: sup ratio {result.running_sup[-1]:.6g}, "
        f"last-decade growth {result.last_decade_growth:.2e}"
    )
    return result
