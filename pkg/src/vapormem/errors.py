"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalInstabilityError(ArithmeticError):
    """Non-finite values appeared during time integration."""

    def __init__(self, message, step=None, stage=None):
        super().__init__(message)
        self.step = step
        self.stage = stage


class NegativeSignalError(ValueError):
    """Retrieved counts fall below the noise counts."""


class UndefinedEstimateError(ValueError):
    """A ratio estimator has a zero denominator."""


class FitError(RuntimeError):
    """A fit could not be performed."""
