"""Exception hierarchy shared by the analytical and simulation layers."""


class D2DNetError(Exception):
    """Base class for all package errors."""


class ModelDomainError(D2DNetError, ValueError):
    """An argument or parameter set lies outside the model's domain."""


class ConvergenceError(D2DNetError, ArithmeticError):
    """A numerical routine exhausted its budget without meeting tolerance."""


class ParameterFileError(ModelDomainError):
    """A parameter file or override could not be parsed.

    The offending key is kept on ``key`` so front ends can report it.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class SaturationError(D2DNetError, RuntimeError):
    """The simulator could not activate every idle base station."""
