"""Exception hierarchy shared by all modules."""


class ImpulseKitError(Exception):
    """Base class for errors raised by impulsekit."""


class DomainError(ImpulseKitError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class PreconditionError(DomainError):
    """A documented precondition of an operation does not hold."""


class NumericOverflowError(ImpulseKitError, ArithmeticError):
    """Stepping produced a non-finite state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NotAvailableError(ImpulseKitError):
    """The requested quantity has no closed form for this object."""


class ConfigError(ImpulseKitError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class InadmissiblePolicyError(ImpulseKitError, RuntimeError):
    """Intervention rate exceeded the admissibility cap."""


class ConsistencyError(ImpulseKitError, RuntimeError):
    """An internal conservation check failed (e.g. probability mass leak)."""
