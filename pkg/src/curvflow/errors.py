"""Exception types shared across the package."""


class CurvFlowError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CurvFlowError, ValueError):
    pass


class InvalidData(CurvFlowError, ValueError):
    """Raised for non-finite samples or coefficients."""


class CurvatureOverflow(CurvFlowError, ArithmeticError):
    """exp(+-2u) would overflow or lose all precision."""


class PositivityViolation(CurvFlowError, ArithmeticError):
    """The normalising integral of f e^{2u} is no longer positive."""


class NoConvergence(CurvFlowError, RuntimeError):
    pass


class BlowUp(CurvFlowError, ArithmeticError):
    """The flow left the representable regime; carries the last good state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state
