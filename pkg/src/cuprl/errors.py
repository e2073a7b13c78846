"""Exception hierarchy shared across the package."""


class CupError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CupError, ValueError):
    """Malformed model, policy, or configuration (dimension mismatch, bad field)."""


class DomainError(CupError, ValueError):
    """An argument lies outside the domain of the operation (e.g. gamma not in (0, 1))."""


class NumericalError(CupError, ArithmeticError):
    """A numerical routine produced non-finite values or failed to solve."""


class UsageError(CupError, ValueError):
    """The operation was called in a way it does not support (empty batch, enumeration cap)."""
