"""Exception types raised by the solver stack."""


class CHDBCError(Exception):
    """Base class for all package errors."""


class DomainError(CHDBCError, ValueError):
    """A value lies outside the effective domain of a graph."""


class ConvergenceError(CHDBCError, RuntimeError):
    """The scalar resolvent root-finder did not reach its tolerance."""


class MeanError(CHDBCError, ValueError):
    """A field that must be mean-free is not."""


class SolverError(CHDBCError, RuntimeError):
    """A linear solve failed or stalled."""


class NewtonDivergence(CHDBCError, RuntimeError):
    """Newton iteration failed to reduce the residual, even after halving the step."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ParseError(CHDBCError, ValueError):
    """A configuration file could not be read."""


class ValidationError(CHDBCError, ValueError):
    """One or more parameters violate the model assumptions.

    ``violations`` holds every problem found, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
