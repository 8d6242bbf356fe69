"""Exception types shared across the package."""


class NeurotopoError(Exception):
    """Base class for all package errors."""


class InvalidProblem(NeurotopoError, ValueError):
    """A problem definition violates its invariants."""


class InvalidDensity(NeurotopoError, ValueError):
    pass


class InvalidVolume(NeurotopoError, ValueError):
    pass


class SingularSystem(NeurotopoError, RuntimeError):
    """The stiffness system could not be solved to tolerance.

    Usually a sign of insufficient supports.
    """


class ShapeMismatch(NeurotopoError, ValueError):
    pass


class BudgetExceeded(NeurotopoError, MemoryError):
    pass


class UnknownDual(NeurotopoError, KeyError):
    pass


class DegenerateProfile(NeurotopoError, ValueError):
    pass


class SizeExceeded(NeurotopoError, ValueError):
    pass


class NegativeSpectrum(NeurotopoError, ArithmeticError):
    pass


class NonFinite(NeurotopoError, FloatingPointError):
    pass


class ConfigError(NeurotopoError, ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
