"""Exception and warning types raised across the package."""


class BurnoutError(Exception):
    """Base class for all package errors."""


class ParameterError(BurnoutError, ValueError):
    """Invalid distribution or model parameters."""


class ArgumentError(BurnoutError, ValueError):
    """Invalid call arguments (shapes, grids, step sizes)."""


class NonnegativityError(BurnoutError, ValueError):
    """A hazard evaluation came out negative or non-finite."""


class UnsupportedError(BurnoutError, NotImplementedError):
    """Operation not defined for the given variant."""


class NumericError(BurnoutError, ArithmeticError):
    """Numerical failure: non-finite state, excessive clamping."""


class ConvergenceError(BurnoutError, RuntimeError):
    """Iterative solver failed; ``best`` carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NumericWarning(UserWarning):
    """Quadrature refinement or approximation validity warning."""
