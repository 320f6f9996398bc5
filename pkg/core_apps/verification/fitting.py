from typing import Optional, Sequence

import numpy as np
from scipy import stats

from core_apps.common.errors import FitError
from core_apps.verification.models import DecayFit

MIN_POINTS = 8


def fit_decay_exponent(
    times: Sequence[float],
    values: Sequence[float],
    window: Optional[tuple[float, float]] = None,
) -> DecayFit:
    """Slope of log(value) against log(1 + t) over the samples inside window."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise FitError(f"times {times.shape} and values {values.shape} differ in shape")
    lo, hi = window if window is not None else (times.min(), times.max())
    inside = (times >= lo) & (times <= hi)
    if inside.sum() < MIN_POINTS:
        raise FitError(
            f"Need at least {MIN_POINTS} points in [{lo:g}, {hi:g}], got {int(inside.sum())}"
        )
    if np.any(values[inside] <= 0.0) or not np.all(np.isfinite(values[inside])):
        raise FitError(f"Values in [{lo:g}, {hi:g}] must be positive and finite")

    x = np.log1p(times[inside])
    y = np.log(values[inside])
    if np.ptp(y) == 0.0:
        return DecayFit(
            slope=0.0,
            stderr=0.0,
            intercept=float(y[0]),
            points=int(inside.sum()),
            window=(float(lo), float(hi)),
        )
    result = stats.linregress(x, y)
    return DecayFit(
        slope=float(result.slope),
        stderr=float(result.stderr),
        intercept=float(result.intercept),
        points=int(inside.sum()),
        window=(float(lo), float(hi)),
    )
