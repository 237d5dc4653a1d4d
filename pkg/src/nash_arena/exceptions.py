"""Exception types raised across the package."""


class InvalidDimensionError(ValueError):
    """Raised when array shapes or game sizes are inconsistent."""


class DomainError(ValueError):
    """Raised when a quantity needs strictly positive probabilities and gets zeros."""


class AssumptionViolatedError(ValueError):
    """Raised when a game has no full-support Nash equilibrium."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine hits its iteration cap.

    The final residual is kept on ``residual``.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class InnerSolveError(RuntimeError):
    """Raised when a nested inner optimization produces a non-finite objective."""
