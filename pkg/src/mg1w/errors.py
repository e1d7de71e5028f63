"""Exception types raised across the package."""


class Mg1wError(Exception):
    """Base class for package errors."""


class DomainError(Mg1wError, ValueError):
    """Argument outside the domain of an operation."""


class SingularExpansion(Mg1wError, ZeroDivisionError):
    """A jet division or expansion hit a zero leading coefficient."""


class PoleEvaluation(Mg1wError, ValueError):
    """A transform was evaluated at (or numerically on top of) a pole."""


class StabilityViolation(Mg1wError, ValueError):
    """The queue is not stable (rho >= 1)."""

    def __init__(self, rho: float, msg: str | None = None):
        self.rho = rho
        super().__init__(msg or f"unstable queue: rho = {rho:.6g} >= 1")


class UnsupportedModel(Mg1wError, TypeError):
    """The operation is not available for this service model."""


class AdmissibilityError(Mg1wError, ValueError):
    """An exponential cost term decays too slowly for the w-function to exist."""


class DivergentSeries(Mg1wError, ArithmeticError):
    """A germ series diverges; ``witness`` holds the growing partial sums."""

    def __init__(self, msg: str, witness=None, indices=None):
        super().__init__(msg)
        self.witness = list(witness) if witness is not None else []
        self.indices = list(indices) if indices is not None else []


class CellOverflow(Mg1wError, OverflowError):
    """The deterministic-service backlog cell index exceeds the supported cap."""


class ConfigError(Mg1wError, ValueError):
    """Malformed or unknown configuration content."""
