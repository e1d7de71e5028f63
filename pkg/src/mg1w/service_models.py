"""Service-time models and the queue specification built on top of them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DomainError, PoleEvaluation, StabilityViolation
from .numerics import Jet


@dataclass(frozen=True)
class Deterministic:
    """Every job needs exactly ``d`` units of work."""

    d: float
    kind = "deterministic"

    def __post_init__(self):
        if not self.d > 0:
            raise DomainError("deterministic service time must be positive")

    def mean(self) -> float:
        return self.d

    def moment(self, k: int) -> float:
        return self.d**k

    def lst(self, s: complex) -> complex:
        return np.exp(-s * self.d)

    def shifted_moment_coeff(self, a: complex, k: int) -> complex:
        # d^k/k! through logs so large k underflows instead of overflowing
        return math.exp(k * math.log(self.d) - math.lgamma(k + 1)) * np.exp(-a * self.d)

    def lst_neg_jet(self, s0: complex, K: int) -> Jet:
        """Jet of D*(-s) = e^{s d} at ``s0``."""
        return Jet.exp_linear(self.d, s0, K)

    @property
    def lst_pole(self) -> Optional[float]:
        return None

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.full(size, self.d, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "deterministic", "d": self.d}


@dataclass(frozen=True)
class Erlang:
    """Sum of ``q`` independent exponential phases, each of rate ``omega``."""

    q: int
    omega: float
    kind = "erlang"

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise DomainError("Erlang shape must be a positive integer")
        if not self.omega > 0:
            raise DomainError("Erlang rate must be positive")
        object.__setattr__(self, "q", int(self.q))

    def mean(self) -> float:
        return self.q / self.omega

    def moment(self, k: int) -> float:
        return math.factorial(k + self.q - 1) / math.factorial(self.q - 1) / self.omega**k

    def lst(self, s: complex) -> complex:
        if s == -self.omega:
            raise PoleEvaluation(f"service transform has a pole at s = {-self.omega}")
        return (self.omega / (self.omega + s)) ** self.q

    def shifted_moment_coeff(self, a: complex, k: int) -> complex:
        if a == -self.omega:
            raise PoleEvaluation(f"shift a = {a} sits on the service pole")
        return math.comb(k + self.q - 1, k) * self.omega**self.q / (self.omega + a) ** (k + self.q)

    def lst_neg_jet(self, s0: complex, K: int) -> Jet:
        """Jet of D*(-s) = (omega/(omega - s))^q at ``s0``."""
        if s0 == self.omega:
            raise PoleEvaluation("expansion point on the service pole")
        base = Jet.constant(self.omega, K, s0) / (self.omega - Jet.variable(s0, K))
        return base**self.q

    @property
    def lst_pole(self) -> Optional[float]:
        return -self.omega

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.gamma(self.q, 1.0 / self.omega, size)

    def to_dict(self) -> dict:
        return {"kind": "erlang", "q": self.q, "omega": self.omega}


@dataclass(frozen=True)
class Exponential(Erlang):
    """Exponential service with rate ``omega`` (Erlang of shape one)."""

    q: int = field(default=1, init=False)
    omega: float = 1.0
    kind = "exponential"

    def __init__(self, omega: float):
        object.__setattr__(self, "q", 1)
        object.__setattr__(self, "omega", omega)
        self.__post_init__()

    def moment(self, k: int) -> float:
        return math.factorial(k) / self.omega**k

    def shifted_moment_coeff(self, a: complex, k: int) -> complex:
        if a == -self.omega:
            raise PoleEvaluation(f"shift a = {a} sits on the service pole")
        return self.omega / (self.omega + a) ** (k + 1)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.exponential(1.0 / self.omega, size)

    def to_dict(self) -> dict:
        return {"kind": "exponential", "omega": self.omega}


ServiceModel = Union[Deterministic, Exponential, Erlang]


def moment(model: ServiceModel, k: int) -> float:
    """E[D^k]."""
    if k < 0:
        raise DomainError("moment order must be nonnegative")
    return model.moment(k)


def lst(model: ServiceModel, s: complex) -> complex:
    """D*(s) = E[exp(-s D)]."""
    return model.lst(s)


def shifted_moment_coeff(model: ServiceModel, a: complex, k: int) -> complex:
    """x_{a:k} = E[D^k exp(-a D)] / k!."""
    return model.shifted_moment_coeff(a, k)


def model_from_dict(d: dict) -> ServiceModel:
    kind = d.get("kind")
    if kind == "deterministic":
        return Deterministic(float(d["d"]))
    if kind == "exponential":
        return Exponential(float(d["omega"]))
    if kind == "erlang":
        return Erlang(int(d["q"]), float(d["omega"]))
    raise DomainError(f"unknown service model kind {kind!r}")


@dataclass(frozen=True)
class QueueSpec:
    """Poisson(lam) arrivals served FCFS with service model ``model``.

    ``model0`` is the service law of a job that finds the server idle; it
    defaults to ``model`` and may only be deterministic otherwise.
    """

    model: ServiceModel
    lam: float
    model0: Optional[ServiceModel] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("arrival rate must be positive")
        if self.model0 is not None and self.model0 != self.model:
            if not isinstance(self.model0, Deterministic):
                raise DomainError("a distinct setup service law must be deterministic")

    @property
    def rho(self) -> float:
        return self.lam * self.model.mean()

    @property
    def rho0(self) -> float:
        m0 = self.model0 if self.model0 is not None else self.model
        return self.lam * m0.mean()

    @property
    def has_setup(self) -> bool:
        return self.model0 is not None and self.model0 != self.model

    def x(self, k: int) -> float:
        """x_k = E[D^k]/k!."""
        return float(np.real(self.model.shifted_moment_coeff(0.0, k)))


def utilization(spec: QueueSpec) -> tuple[float, float]:
    return spec.rho, spec.rho0


def stability_check(spec: QueueSpec) -> None:
    """Raise :class:`StabilityViolation` unless rho < 1."""
    if not spec.rho < 1.0:
        raise StabilityViolation(spec.rho)
