from dataclasses import dataclass

import numpy as np

from core_apps.common.models import SerializableModel


@dataclass(frozen=True, eq=False)
class MacroFields(SerializableModel):
    """Coefficients of the projection onto the collision invariants.

    Scalars carry the spatial shape of the input; b has its component axis first.
    """

    a_plus: np.ndarray
    a_minus: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def from_coefficients(cls, coefficients: np.ndarray) -> "MacroFields":
        return cls(
            a_plus=coefficients[0],
            a_minus=coefficients[1],
            b=coefficients[2:5],
            c=coefficients[5],
        )

    def coefficients(self) -> np.ndarray:
        return np.concatenate(
            [self.a_plus[None], self.a_minus[None], self.b, self.c[None]]
        )

    @property
    def charge(self) -> np.ndarray:
        return self.a_plus - self.a_minus


@dataclass(frozen=True, eq=False)
class HighMoments(SerializableModel):
    """Theta has shape (2, 3, 3, ...), Lambda (2, 3, ...); the leading axis is the species."""

    Theta: np.ndarray
    Lambda: np.ndarray

    def combined(self, sign: int = 1) -> "HighMoments":
        """Moments of f_+ + f_- (sign=1) or f_+ - f_- (sign=-1)."""
        return HighMoments(
            Theta=(self.Theta[0] + sign * self.Theta[1])[None],
            Lambda=(self.Lambda[0] + sign * self.Lambda[1])[None],
        )


@dataclass(frozen=True)
class CompatibilityDefect(SerializableModel):
    charge: float
    moments: tuple[float, ...]

    @property
    def worst(self) -> float:
        return max(abs(self.charge), *(abs(m) for m in self.moments))


@dataclass(frozen=True, eq=False)
class ResidualReport(SerializableModel):
    """Per-equation residual norms at the interior sample times.

    residuals holds the literal defect of each moment equation; weighted holds
    the same equation's test function, damped by <v>^-4, paired with the kinetic defect.
    """

    times: np.ndarray
    residuals: dict
    weighted: dict

    def rows(self) -> list[tuple[str, float, float, float]]:
        nan = np.full(len(self.times), np.nan)
        return [
            (name, float(t), float(value), float(self.weighted.get(name, nan)[i]))
            for name, values in self.residuals.items()
            for i, (t, value) in enumerate(zip(self.times, values))
        ]

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name, values in self.residuals.items():
            weighted = self.weighted.get(name)
            out[name] = {
                "rms": float(np.sqrt(np.mean(values**2))),
                "max": float(np.max(values)),
                "rms_w4": float(np.sqrt(np.mean(weighted**2)))
                if weighted is not None
                else None,
            }
        return out

    def worst(self, names=None) -> float:
        names = self.residuals.keys() if names is None else names
        return max(float(np.max(self.residuals[name])) for name in names)
