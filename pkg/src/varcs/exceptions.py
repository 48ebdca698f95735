"""Exception types raised by the estimation stack."""


class VarcsError(Exception):
    """Base class for all package errors."""


class ShapeError(VarcsError, ValueError):
    """Array dimensions are inconsistent with the requested operation."""


class RankError(VarcsError, ValueError):
    """A rank or dimension argument is out of range, or an input is rank deficient."""


class ConvergenceError(VarcsError, RuntimeError):
    """An iterative routine failed to converge.

    Carries whatever partial state the routine had when it gave up.
    """

    def __init__(self, message, iterations=None, trajectory=None):
        super().__init__(message)
        self.iterations = iterations
        self.trajectory = list(trajectory) if trajectory is not None else []


class DivergenceError(ConvergenceError):
    """The objective became non-finite or blew up during gradient descent."""


class StationarityError(VarcsError, ValueError):
    """Coefficients do not define a stationary process."""


class SpecError(VarcsError, ValueError):
    """An experiment or data-generating specification is invalid."""
