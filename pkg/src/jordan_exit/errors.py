"""Exception hierarchy."""


class JordanExitError(Exception):
    pass


class InvalidInputError(JordanExitError, ValueError):
    pass


class DegenerateInputError(InvalidInputError):
    """Input lies on a probability-zero set where a formula is undefined."""


class NumericDomainError(JordanExitError, ArithmeticError):
    pass


class ConvergenceError(JordanExitError, RuntimeError):
    pass


class EscapeError(JordanExitError, RuntimeError):
    """Deterministic trajectory left its bounding region."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class GeometryError(JordanExitError, RuntimeError):
    pass


class StateError(JordanExitError, RuntimeError):
    pass


class MisuseError(JordanExitError, TypeError):
    pass


class BudgetError(JordanExitError, RuntimeError):
    pass


class BlowUpError(JordanExitError, FloatingPointError):
    pass


class ConfigError(InvalidInputError):
    """Configuration failed validation; ``errors`` lists ``(path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))
