"""Exception hierarchy shared by all modules."""


class SnlsError(Exception):
    """Base class for every error raised by the package."""


class UsageError(SnlsError, ValueError):
    """Invalid arguments: grid mismatch, bad parameters, out-of-range indices."""


class NumericError(SnlsError, ArithmeticError):
    """Non-finite values or overflow during a computation."""


class ConvergenceError(SnlsError):
    """An iterative solver exhausted its budget.

    The last residual reached is kept on ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateSolutionError(SnlsError):
    """A solver collapsed onto the trivial solution."""


class DomainError(SnlsError, ValueError):
    """A functional was evaluated where it is undefined (e.g. zero denominator)."""


class PreconditionError(SnlsError):
    """A required input artifact is missing or unusable."""
