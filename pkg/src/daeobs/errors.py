"""Exception hierarchy shared across the package."""


class DaeError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(DaeError):
    """Expression or model document syntax error with a source position."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)


class ModelError(DaeError):
    """Structurally invalid model definition."""


class EvalDomainError(DaeError):
    """Domain violation (divide by zero, log of non-positive, ...)."""


class NewtonError(DaeError):
    """Newton iteration failed to converge."""

    def __init__(self, message, residual=None, t=None):
        self.residual = residual
        self.t = t
        super().__init__(message)


class RegularityError(DaeError):
    """Algebraic Jacobian singular or ill-conditioned along the solution."""


class AlgebraicSensitivityError(DaeError):
    """Directional algebraic sensitivity solve failed."""

    def __init__(self, message, t=None, column=None):
        self.t = t
        self.column = column
        super().__init__(message)
