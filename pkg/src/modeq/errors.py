"""Exception types raised across the package."""


class ModeqError(Exception):
    """Base class for all package errors."""


class NonFiniteState(ModeqError, FloatingPointError):
    """A simulated state left the finite range (usually a too-large step size)."""

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


class SingularHessianResolvent(ModeqError, ArithmeticError):
    pass


class IncrementsNotRetained(ModeqError, ValueError):
    pass


class ToleranceNotMet(ModeqError, RuntimeError):
    pass


class DegenerateFit(ModeqError, ValueError):
    pass


class InvalidRegime(ModeqError, ValueError):
    pass


class ConfigError(ModeqError, ValueError):
    pass
