class LandauError(Exception):
    """Base class for every failure raised by the toolkit."""


class GridError(LandauError, ValueError):
    pass


class WeightError(LandauError, ValueError):
    pass


class GridMismatchError(LandauError, ValueError):
    pass


class NeutralityError(LandauError, ValueError):
    pass


class MicroscopicSourceError(LandauError, ValueError):
    pass


class LyapunovConfigError(LandauError, ValueError):
    pass


class QuadratureError(LandauError, RuntimeError):
    pass


class FitError(LandauError, ValueError):
    pass


class SolverError(LandauError, RuntimeError):
    pass


class PositivityError(SolverError):
    def __init__(self, message: str, *, min_value: float, time: float) -> None:
        super().__init__(message)
        self.min_value = min_value
        self.time = time


class ConfigError(LandauError, ValueError):
    pass


class CriterionFailure(LandauError):
    """An acceptance criterion evaluated to False; maps to exit status 1."""


class FrequencyError(LandauError, ValueError):
    pass
