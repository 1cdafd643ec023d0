"""Exception types shared across the package."""


class IdentificationError(ValueError):
    """Raised when plant parameters cannot be identified from data."""


class AssumptionError(ValueError):
    """Raised when the hypotheses of the stability theorem do not hold.

    Distinct from an *unstable* verdict: an unstable system is a valid answer,
    an unmet hypothesis means the analysis does not apply at all.
    """


class ConfigError(ValueError):
    """Raised for inconsistent or malformed run configurations."""


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
