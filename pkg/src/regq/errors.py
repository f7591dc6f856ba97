"""Exception types raised across the package."""


class RegQError(Exception):
    pass


class InvalidArgument(RegQError, ValueError):
    pass


class DegenerateFeatures(RegQError):
    """Feature second-moment matrix is (numerically) singular."""


class InsufficientSamples(RegQError, ValueError):
    pass


class NonConvergence(RegQError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history if history is not None else []


class Divergence(RegQError):
    """Parameters became non-finite; ``state`` holds the last finite state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class AssumptionViolation(RuntimeWarning):
    """Smallest singular value of the gradient matrix is numerically zero."""
