"""Exception hierarchy shared by all modules."""


class EmzError(Exception):
    """Base class for library errors."""


class ContractError(EmzError, ValueError):
    """An input violates an operation's preconditions."""


class DegreeOverflowError(EmzError):
    """A polynomial grew past the configured maximum total degree."""


class NumericalError(EmzError, ArithmeticError):
    """A numerical routine failed (quadrature, instability, non-PSD covariance)."""


class NotPSDError(NumericalError):
    """A covariance matrix has a significantly negative eigenvalue."""


class BlowUpError(NumericalError):
    """A simulated trajectory became non-finite."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration limit."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(EmzError, ValueError):
    """Invalid or incomplete run configuration."""
