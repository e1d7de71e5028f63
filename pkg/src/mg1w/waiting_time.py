"""Stationary waiting time of the M/G/1 queue.

Sign conventions used throughout the package: a pole ``p`` stored in a
:class:`PoleSet` is a pole of W*(s) (so ``Re p < 0``); residues are taken of
W*(-s) at ``s = -p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .errors import DomainError, PoleEvaluation, UnsupportedModel
from .numerics import Jet, erlang_scenario_counts, lambert_w_minus1, scenario_counts
from .service_models import Deterministic, Erlang, Exponential, QueueSpec, stability_check


@dataclass(frozen=True)
class WtGerm:
    """y_k = E[W^k]/k!, the Taylor coefficients of W*(-s) at 0."""

    coeffs: np.ndarray
    spec: QueueSpec

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, k):
        return self.coeffs[k]


@dataclass(frozen=True)
class ShiftedWtGerm:
    """Taylor coefficients of W*(-s) about s = -a.

    ``coeffs[k] = E[W^k e^{-aW}]/k! = (-1)^k W*^{(k)}(a)/k!``, so
    ``coeffs[0] = W*(a)``.
    """

    a: complex
    coeffs: np.ndarray
    spec: QueueSpec

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, k):
        return self.coeffs[k]


@dataclass(frozen=True)
class Pole:
    p: complex
    degree: int
    varpi: Tuple[complex, ...]


@dataclass(frozen=True)
class PoleSet:
    poles: Tuple[Pole, ...]
    spec: QueueSpec

    def __iter__(self):
        return iter(self.poles)

    def __len__(self):
        return len(self.poles)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def _denominator(spec: QueueSpec, s: complex) -> complex:
    return s - spec.lam * (1.0 - spec.model.lst(s))


def pk_lst(spec: QueueSpec, s: complex) -> complex:
    """W*(s) = (1-rho) s / (s - lam (1 - D*(s)))."""
    stability_check(spec)
    if s == 0:
        return 1.0
    if abs(s) < 1e-7:
        y = germ_at_zero(spec, 2).coeffs
        return y[0] - y[1] * s + y[2] * s * s
    den = _denominator(spec, s)
    if den == 0:
        raise PoleEvaluation(f"W* has a pole at s = {s}")
    val = (1.0 - spec.rho) * s / den
    return val


def true_lst(spec: QueueSpec, s: complex) -> complex:
    """Transform of the waiting time of an arbitrary job when setup jobs differ."""
    stability_check(spec)
    if not spec.has_setup:
        return pk_lst(spec, s)
    if s == 0:
        return 1.0
    lam, rho, rho0 = spec.lam, spec.rho, spec.rho0
    num = s - lam * (spec.model0.lst(s) - spec.model.lst(s))
    den = _denominator(spec, s)
    if den == 0:
        raise PoleEvaluation(f"W~* has a pole at s = {s}")
    return (1.0 - rho) / (1.0 - rho + rho0) * num / den


def g_neg_jet(spec: QueueSpec, s0: complex, K: int) -> Jet:
    """Jet at s0 of g(s) = s + lam - lam D*(-s), the denominator of W*(-s)."""
    return Jet.variable(s0, K) + spec.lam - spec.model.lst_neg_jet(s0, K) * spec.lam


def wstar_neg_jet(spec: QueueSpec, s0: complex, K: int) -> Jet:
    """Jet of W*(-s) = (1-rho) s / g(s) at a regular point s0."""
    stability_check(spec)
    if s0 == 0:
        g = g_neg_jet(spec, 0.0, K + 1).shift_pow(-1)  # g(s)/s
        return Jet.constant(1.0 - spec.rho, K, 0.0) / g
    num = Jet.variable(s0, K) * (1.0 - spec.rho)
    g = g_neg_jet(spec, s0, K)
    if abs(g.coeffs[0]) < 1e-300:
        raise PoleEvaluation(f"W*(-s) has a pole at s = {s0}")
    return num / g


# ---------------------------------------------------------------------------
# germs
# ---------------------------------------------------------------------------


def germ_at_zero(spec: QueueSpec, n: int) -> WtGerm:
    """y_0..y_n from y_k = lam/(1-rho) sum_{t<k} x_{k-t+1} y_t."""
    stability_check(spec)
    if n < 0:
        raise DomainError("germ length must be nonnegative")
    return WtGerm(_germ_cached(spec, n), spec)


@lru_cache(maxsize=256)
def _germ_cached(spec: QueueSpec, n: int) -> np.ndarray:
    lam, rho = spec.lam, spec.rho
    x = np.array([spec.x(k) for k in range(n + 2)])
    y = np.zeros(n + 1)
    y[0] = 1.0
    c = lam / (1.0 - rho)
    for k in range(1, n + 1):
        t = np.arange(k)
        y[k] = c * float(np.dot(x[k - t + 1], y[:k]))
    y.setflags(write=False)
    return y


def exponential_germ_closed(spec: QueueSpec, n: int) -> np.ndarray:
    """y_k = lam / (omega (omega - lam)^k) for exponential service."""
    if not isinstance(spec.model, Exponential):
        raise UnsupportedModel("closed germ form needs exponential service")
    lam, om = spec.lam, spec.model.omega
    y = np.array([lam / (om * (om - lam) ** k) for k in range(n + 1)])
    y[0] = 1.0
    return y


def deterministic_germ_series(spec: QueueSpec, n: int) -> np.ndarray:
    """y_k = d^k sum_{t=1}^k (rho/(1-rho))^t phi(t,k+t)/(k+t)!."""
    if not isinstance(spec.model, Deterministic):
        raise UnsupportedModel("scenario series needs deterministic service")
    stability_check(spec)
    d, rho = spec.model.d, spec.rho
    y = np.zeros(n + 1)
    y[0] = 1.0
    if n == 0:
        return y
    tab = scenario_counts(n, 2 * n)
    r = rho / (1.0 - rho)
    for k in range(1, n + 1):
        y[k] = d**k * sum(r**t * tab[t, k + t] for t in range(1, k + 1))
    return y


def erlang_germ_series(spec: QueueSpec, n: int) -> np.ndarray:
    """y_k = omega^{-k} sum_{t=1}^k (lam/(omega - q lam))^t theta_q(t,k+t)."""
    if not isinstance(spec.model, Erlang):
        raise UnsupportedModel("theta series needs Erlang service")
    stability_check(spec)
    q, om, lam = spec.model.q, spec.model.omega, spec.lam
    y = np.zeros(n + 1)
    y[0] = 1.0
    if n == 0:
        return y
    tab = erlang_scenario_counts(q, n, 2 * n)
    r = lam / (om - q * lam)
    for k in range(1, n + 1):
        y[k] = sum(r**t * tab[t, k + t] for t in range(1, k + 1)) / om**k
    return y


def germ_at_point(spec: QueueSpec, a: complex, n: int) -> ShiftedWtGerm:
    """Coefficients of W*(-s) about -a by the shifted-moment recursion.

    With F_0 = lam(1 - D*(a)) - a, F_1 = 1 - lam x_{a:1} and F_k = -lam x_{a:k}:
    F_0 Y_k = R_k - sum_{t<k} F_{k-t} Y_t where R = (-(1-rho) a, 1-rho, 0, ...).
    """
    stability_check(spec)
    if a == 0:
        raise DomainError("use germ_at_zero for a = 0")
    if abs(a) < 0.1 * abs(dominant_pole(spec)):
        # the recursion divides by F_0 ~ -(1-rho)a, so re-expand the germ at 0
        return ShiftedWtGerm(a, _shift_germ(spec, a, n), spec)
    lam, rho = spec.lam, spec.rho
    m = spec.model
    xa = [m.shifted_moment_coeff(a, k) for k in range(n + 1)]
    F = np.empty(n + 1, dtype=complex)
    F[0] = lam * (1.0 - xa[0]) - a
    if n >= 1:
        F[1] = 1.0 - lam * xa[1]
    for k in range(2, n + 1):
        F[k] = -lam * xa[k]
    if abs(F[0]) < 1e-14 * max(1.0, abs(a)):
        raise PoleEvaluation(f"a = {a} is a pole of W*")
    R = np.zeros(n + 1, dtype=complex)
    R[0] = -(1.0 - rho) * a
    if n >= 1:
        R[1] = 1.0 - rho
    Y = np.zeros(n + 1, dtype=complex)
    for k in range(n + 1):
        acc = R[k] - np.dot(F[k:0:-1], Y[:k]) if k else R[0]
        Y[k] = acc / F[0]
    if isinstance(a, (int, float)) or (isinstance(a, complex) and a.imag == 0):
        if np.all(np.abs(Y.imag) <= 1e-15 * np.maximum(1.0, np.abs(Y.real))):
            Y = Y.real.astype(complex)
    return ShiftedWtGerm(a, Y, spec)


def _shift_germ(spec: QueueSpec, a: complex, n: int) -> np.ndarray:
    """Y_k = sum_{j>=k} C(j,k) y_j (-a)^{j-k}, valid well inside the radius |p_W|."""
    N = n + 80 + n // 4
    y = germ_at_zero(spec, N).coeffs
    Y = np.zeros(n + 1, dtype=complex)
    for k in range(n + 1):
        j = np.arange(k, N + 1)
        binom = np.array([math.comb(int(i), k) for i in j], dtype=float)
        Y[k] = np.sum(binom * y[k:] * (-a) ** (j - k))
    if np.isrealobj(a) or complex(a).imag == 0:
        Y = Y.real.astype(complex)
    return Y


# ---------------------------------------------------------------------------
# poles
# ---------------------------------------------------------------------------


def dominant_pole(spec: QueueSpec) -> float:
    """Rightmost (real, negative) pole p_W of W*(s)."""
    stability_check(spec)
    m, lam = spec.model, spec.lam
    if isinstance(m, Exponential):
        return lam - m.omega
    if isinstance(m, Deterministic):
        rho = spec.rho
        w = lambert_w_minus1(-rho * math.exp(-rho))
        p = lam * (1.0 + w / rho)
        # Newton polish on s - lam (1 - e^{-s d})
        for _ in range(20):
            f = p - lam * (1.0 - math.exp(-p * m.d))
            fp = 1.0 - lam * m.d * math.exp(-p * m.d)
            step = f / fp
            p -= step
            if abs(step) < 1e-16 * abs(p):
                break
        return p
    if isinstance(m, Erlang):
        reals = [pl.p.real for pl in pole_set(spec) if abs(pl.p.imag) < 1e-9]
        return max(reals)
    raise UnsupportedModel(type(m).__name__)


def _erlang_roots(spec: QueueSpec) -> np.ndarray:
    q, om, lam = spec.model.q, spec.model.omega, spec.lam
    if q > 12:
        raise UnsupportedModel("Erlang shape above 12 not supported for pole extraction")
    # (s - lam)(s + om)^q + lam om^q vanishes at 0; divide that root out
    poly = np.polymul([1.0, -lam], np.poly([-om] * q))
    poly[-1] += lam * om**q
    quot, _ = np.polydiv(poly, [1.0, 0.0])
    roots = np.roots(quot).astype(complex)
    polished = []
    for r in roots:
        s = r
        for _ in range(50):
            f = _denominator(spec, s)
            fp = 1.0 - lam * q * om**q / (om + s) ** (q + 1)
            if fp == 0:
                break
            step = f / fp
            s = s - step
            if abs(step) < 1e-15 * max(1.0, abs(s)):
                break
        # keep the polished value only if it moved a little
        polished.append(s if abs(s - r) < 1e-4 * max(1.0, abs(r)) else r)
    return np.array(polished)


def _cluster(roots: np.ndarray, tol: float = 1e-6):
    groups: list[list[complex]] = []
    for r in roots:
        for g in groups:
            if abs(g[0] - r) < tol * max(1.0, abs(r)):
                g.append(r)
                break
        else:
            groups.append([r])
    out = []
    for g in groups:
        c = complex(np.mean(g))
        if abs(c.imag) < 1e-12 * max(1.0, abs(c)):
            c = complex(c.real, 0.0)
        out.append((c, len(g)))
    return out


def pole_regular_jet(spec: QueueSpec, pole: complex, degree: int, K: int) -> Jet:
    """Jet at s = -pole of (s + pole)^degree W*(-s), orders 0..K."""
    s0 = -pole
    g = g_neg_jet(spec, s0, K + degree)
    g = g.shift_pow(-degree)
    num = Jet.variable(s0, K) * (1.0 - spec.rho)
    return num / g


@lru_cache(maxsize=128)
def pole_set(spec: QueueSpec) -> PoleSet:
    """All poles of W*(s) with their leading residue coefficients."""
    stability_check(spec)
    m = spec.model
    if isinstance(m, Deterministic):
        raise UnsupportedModel("deterministic service has infinitely many poles")
    if isinstance(m, Exponential):
        groups = [(complex(spec.lam - m.omega), 1)]
    else:
        groups = _cluster(_erlang_roots(spec))
    poles = []
    for p, deg in groups:
        jet = pole_regular_jet(spec, p, deg, deg - 1)
        poles.append(Pole(p, deg, tuple(complex(c) for c in jet.coeffs)))
    poles.sort(key=lambda pl: (-pl.p.real, pl.p.imag))
    return PoleSet(tuple(poles), spec)


# ---------------------------------------------------------------------------
# distribution
# ---------------------------------------------------------------------------


def waiting_cdf_mm1(spec: QueueSpec, u: float) -> float:
    if not isinstance(spec.model, Exponential):
        raise UnsupportedModel("closed CDF needs exponential service")
    stability_check(spec)
    lam, om = spec.lam, spec.model.omega
    if u < 0:
        return 0.0
    return 1.0 - lam / om * math.exp(-(om - lam) * u)


def waiting_density_terms(spec: QueueSpec) -> list[tuple[complex, int, complex]]:
    """Continuous part of the waiting density as sum coef * t^r * e^{p t}.

    Obtained from the residues of W*(s) e^{st}; only for finite pole sets.
    """
    out = []
    for pl in pole_set(spec):
        D = pl.degree
        jet = pole_regular_jet(spec, pl.p, D, D - 1).coeffs
        for j in range(D):
            r = D - 1 - j
            coef = jet[j] * (-1.0) ** (j - D) / math.factorial(r)
            out.append((complex(coef), r, pl.p))
    return out


def waiting_cdf(spec: QueueSpec, x):
    """P(W <= x) for any supported model (vectorized in ``x``).

    Finite-pole models use the residue expansion of the density; the
    deterministic model uses the classical alternating sum
    (1-rho) sum_{k <= x/d} (lam(kd - x))^k / k! e^{-lam(kd - x)}.
    """
    stability_check(spec)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(xs)
    m, lam, rho = spec.model, spec.lam, spec.rho
    if isinstance(m, Deterministic):
        d = m.d
        for i, xv in enumerate(xs):
            if xv < 0:
                continue
            kmax = int(math.floor(xv / d + 1e-12))
            acc = 0.0
            for k in range(kmax + 1):
                z = lam * (k * d - xv)
                acc += z**k / math.factorial(k) * math.exp(-z)
            out[i] = (1.0 - rho) * acc
        return out if np.ndim(x) else float(out[0])
    terms = waiting_density_terms(spec)
    pos = xs >= 0
    # 1 - int_x^inf coef t^r e^{pt} dt; int_x^inf t^r e^{pt} = Gamma(r+1, -p x)/(-p)^{r+1}
    tail = np.zeros(xs.shape, dtype=complex)
    for coef, r, p in terms:
        a = -p
        z = a * np.maximum(xs, 0.0)
        acc = np.zeros_like(z)
        term = np.ones_like(z)
        acc = acc + term
        for j in range(1, r + 1):
            term = term * z / j
            acc = acc + term
        tail = tail + coef * math.factorial(r) * np.exp(-z) * acc / a ** (r + 1)
    out = np.where(pos, 1.0 - tail.real, 0.0)
    return out if np.ndim(x) else float(out[0])
