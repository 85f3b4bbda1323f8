"""Exception hierarchy for biwave."""


class BiwaveError(ValueError):
    """Base class for every error raised by the package."""


class GridMismatch(BiwaveError):
    pass


class TimeMismatch(BiwaveError):
    pass


class UnresolvedWidth(BiwaveError):
    pass


class NonPeriodicGrid(BiwaveError):
    pass


class SingularSolve(BiwaveError):
    pass


class UnreachableTime(BiwaveError):
    pass


class AmplitudeNearZero(BiwaveError):
    """|A| fell below the amplitude floor: no consistent history joins the two boundary states."""

    def __init__(self, amplitude, floor):
        self.amplitude = complex(amplitude)
        self.floor = float(floor)
        super().__init__(f"|A| = {abs(self.amplitude):.3e} <= floor {self.floor:.3e}")


class NotAnEigenvector(BiwaveError):
    pass


class SymmetryModeMismatch(BiwaveError):
    pass


class TimeOrderViolation(BiwaveError):
    pass


class MissingSnapshots(BiwaveError):
    pass


class ConfigError(BiwaveError):
    pass
