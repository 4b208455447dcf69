"""Exception hierarchy shared by every module.

Each class maps to one CLI exit code: input problems exit 1, infeasible
uncertainty sets exit 2, numerical failures exit 3.
"""


class EllipticRLError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class InputError(EllipticRLError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, file contents)."""

    exit_code = 1


class DegenerateEllipseError(InputError):
    """Radius does not exceed the focal distance."""


class InfeasibleError(EllipticRLError):
    """The uncertainty set has no point on the zero-sum hyperplane."""

    exit_code = 2


class ConvergenceError(EllipticRLError):
    """An iterative method stopped before reaching its tolerance.

    Attributes
    ----------
    best : object
        Best iterate found (vector, value function or solution).
    gap : float
        Remaining gap or residual when the method stopped.
    """

    exit_code = 3

    def __init__(self, message, best=None, gap=float("nan")):
        super().__init__(message)
        self.best = best
        self.gap = gap


class KernelValidityError(EllipticRLError):
    """A perturbed transition row leaves the probability simplex."""

    exit_code = 2


class TrainingError(ConvergenceError):
    """A training run produced a non-finite parameter."""
