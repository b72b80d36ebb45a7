"""Exception types raised by the toolkit.

Every error derives from :class:`GKdVError` so callers (and the CLI) can
separate domain failures from programming mistakes.
"""


class GKdVError(Exception):
    """Base class for domain errors."""


class InputError(GKdVError, ValueError):
    """An argument outside the domain of an operation."""


class GridError(GKdVError, ValueError):
    pass


class ConvergenceError(GKdVError):
    """An iterative solve failed; ``residual`` holds the last residual norm."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class PositivityError(ConvergenceError):
    pass


class DecompositionError(ConvergenceError):
    pass


class BracketError(GKdVError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class RegimeError(GKdVError):
    """Data is not in the self-similar collapse regime."""


class ObserverError(GKdVError):
    pass
