"""Exception types raised across the sensing pipeline."""


class CoopSenseError(Exception):
    """Base class for library errors."""


class DegenerateWindowError(CoopSenseError, ValueError):
    """The pulse has (numerically) no energy inside the observation window."""


class UnlocalizableError(CoopSenseError):
    """The Fisher information matrix is singular for the selected receivers."""


class InfeasibleEpsilonError(CoopSenseError):
    """The CRLB budget is below the minimum achievable CRLB for the node set."""

    def __init__(self, eps, eps_star):
        super().__init__(f"infeasible-epsilon: eps={eps:.6g} < eps*={eps_star:.6g}")
        self.eps = eps
        self.eps_star = eps_star


class RestorationRequired(CoopSenseError):
    """The barrier method was handed a start point that is not strictly feasible."""


class SolverFailure(CoopSenseError):
    """Newton iterations produced a non-finite step; carries the last feasible point."""

    def __init__(self, message, last_point=None):
        super().__init__(message)
        self.last_point = last_point


class ConvergenceError(CoopSenseError):
    """An iterative routine exceeded its iteration budget."""
