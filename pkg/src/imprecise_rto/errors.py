"""Exception hierarchy shared by all modules."""


class RTOError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(RTOError, ValueError):
    """An argument violates a documented precondition."""


class PreconditionViolation(InvalidInputError):
    """A mathematical precondition of an algorithm does not hold."""


class DegenerateVarianceError(InvalidInputError):
    """A weight matrix was requested with beta > 0 but zero compliance std-dev."""


class NumericalError(RTOError, ArithmeticError):
    """A numerical routine failed (eigen-solver, bisection, iterative solve)."""


class StructuralError(RTOError):
    """The finite element system is singular or otherwise unsolvable."""


class ConfigError(RTOError, ValueError):
    """A run configuration is malformed; the message names the offending key."""
