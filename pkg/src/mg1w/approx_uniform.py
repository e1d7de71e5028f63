"""Uniform polynomial and trigonometric approximation of costs on [0, tau].

Two polynomial families are offered: Bernstein polynomials with error
(3/2) omega(tau/sqrt(n)), and Korovkin-damped Chebyshev sums ("near best")
with error 6 omega(tau/(2n)). Either plugs into the piecewise w machinery
through :func:`interval_cost`. Periodic costs get their own interval w.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import polynomial as P
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import ConfigError, DomainError
from .numerics import Interval
from .piecewise import PiecewiseCostSpec
from .series_taylor import IntervalFn
from .service_models import QueueSpec, stability_check
from .waiting_time import dominant_pole
from .wfunction_core import ExpPolyCost, ExpPolyTerm, PiecewiseExpPoly, mean_cost_per_job, w_for_exp_poly_cost

MODULUS_GRID = 4096
MODULUS_INFLATE = 1.05
ERROR_GRID = 1000


@dataclass
class SampledCost:
    """Black-box cost on [0, tau]; ``modulus`` is an optional exact omega(delta)."""

    evaluator: Callable
    tau: float
    modulus: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        vals = self(np.linspace(0.0, self.tau, 33))
        if not np.all(np.isfinite(vals)):
            raise DomainError("cost evaluator is not finite on [0, tau]")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.evaluator(u)
        return np.broadcast_to(np.asarray(out, dtype=float), u.shape).copy()

    def with_tau(self, tau: float) -> "SampledCost":
        return SampledCost(self.evaluator, tau, self.modulus)


@dataclass
class TailEnvelope:
    """Exp-poly bounds (absolute u) on the cost beyond tau."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        self.lower = tuple(self.lower)
        self.upper = tuple(self.upper)

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        lo = sum((t(u) for t in self.lower), np.zeros(u.shape, dtype=complex)).real
        hi = sum((t(u) for t in self.upper), np.zeros(u.shape, dtype=complex)).real
        return lo, hi

    def check(self, tau: float, span: float) -> None:
        u = np.linspace(tau, tau + span, 257)[1:]
        lo, hi = self.evaluate(u)
        if np.any(lo > hi + 1e-12):
            raise DomainError("tail envelope has lower > upper")


@dataclass
class PolyApprox:
    """Degree-n approximation on [0, tau] with a declared uniform error eta.

    ``coeffs`` are monomial coefficients in u. ``cheb`` (Chebyshev
    coefficients in x = 2u/tau - 1) is kept when available because it
    evaluates stably at high degree.
    """

    coeffs: np.ndarray
    eta: float
    method: str
    tau: float
    cheb: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.eta < 0:
            raise DomainError("error bound must be nonnegative")
        self.coeffs = np.asarray(self.coeffs, dtype=float)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.cheb is not None:
            return C.chebval(2.0 * u / self.tau - 1.0, self.cheb)
        return P.polyval(u, self.coeffs)

    def monomial_value(self, u):
        return P.polyval(np.asarray(u, dtype=float), self.coeffs)


# ---------------------------------------------------------------------------
# modulus of continuity
# ---------------------------------------------------------------------------


def _windowed_range(vals: np.ndarray, k: int) -> float:
    """max over windows of k+1 consecutive samples of (max - min)."""
    if k <= 0:
        return 0.0
    size = k + 1
    hi = maximum_filter1d(vals, size=size, origin=-(size // 2), mode="nearest")
    lo = minimum_filter1d(vals, size=size, origin=-(size // 2), mode="nearest")
    n = vals.size - k
    return float(np.max(hi[:n] - lo[:n])) if n > 0 else float(vals.max() - vals.min())


def modulus_estimate(cost: SampledCost, delta: float, grid: int = MODULUS_GRID) -> float:
    """Grid estimate of omega(c; delta) on [0, tau], inflated by 5%."""
    if not (0 < delta):
        raise DomainError("delta must be positive")
    delta = min(delta, cost.tau)
    u = np.linspace(0.0, cost.tau, grid)
    h = u[1] - u[0]
    k = int(math.floor(delta / h + 1e-12))
    vals = cost(u)
    if k == 0:
        # delta below the grid step: bound by the local slope
        slope = np.max(np.abs(np.diff(vals))) / h
        return MODULUS_INFLATE * slope * delta
    return MODULUS_INFLATE * _windowed_range(vals, k)


def modulus(cost: SampledCost, delta: float) -> float:
    """Exact modulus when the cost carries one, grid estimate otherwise."""
    if cost.modulus is not None:
        return float(cost.modulus(delta))
    return modulus_estimate(cost, delta)


def periodic_modulus_estimate(fn: Callable, period: float, delta: float, grid: int = MODULUS_GRID) -> float:
    """Grid estimate of the modulus of a periodic function over the real line."""
    delta = min(delta, period)
    u = np.linspace(0.0, 2.0 * period, 2 * grid + 1)
    h = u[1] - u[0]
    vals = np.asarray(fn(u), dtype=float) * np.ones(u.shape)
    k = int(math.floor(delta / h + 1e-12))
    if k == 0:
        return MODULUS_INFLATE * np.max(np.abs(np.diff(vals))) / h * delta
    return MODULUS_INFLATE * _windowed_range(vals, k)


# ---------------------------------------------------------------------------
# Bernstein
# ---------------------------------------------------------------------------


def bernstein(cost: SampledCost, n: int) -> PolyApprox:
    """B_n(u) = sum_k C(n,k) Delta^k f_0 (u/tau)^k with f_j = c(j tau / n)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    tau = cost.tau
    f = cost(np.linspace(0.0, tau, n + 1))
    diffs = np.empty(n + 1)
    cur = f.copy()
    for k in range(n + 1):
        diffs[k] = cur[0]
        cur = np.diff(cur)
    coeffs = np.array([math.comb(n, k) * diffs[k] / tau**k for k in range(n + 1)])
    eta = 1.5 * modulus(cost, tau / math.sqrt(n))
    # Chebyshev form for stable evaluation
    cheb = _mono_to_cheb_scaled(coeffs, tau)
    return PolyApprox(coeffs, eta, "bernstein", tau, cheb)


def _mono_to_cheb_scaled(coeffs: np.ndarray, tau: float) -> np.ndarray:
    """Monomials in u to Chebyshev series in x = 2u/tau - 1 (u = tau (x+1)/2)."""
    # coefficients in x of sum c_k (tau/2)^k (x+1)^k
    out = np.zeros(1)
    base = np.array([tau / 2.0, tau / 2.0])  # u as a polynomial in x
    powk = np.array([1.0])
    for c in coeffs:
        out = P.polyadd(out, c * powk)
        powk = P.polymul(powk, base)
    return C.poly2cheb(out)


def bernstein_eval(cost: SampledCost, n: int, u):
    """Direct basis evaluation of B_n, used as a reference."""
    tau = cost.tau
    f = cost(np.linspace(0.0, tau, n + 1))
    x = np.asarray(u, dtype=float) / tau
    k = np.arange(n + 1)
    from scipy.stats import binom

    return np.sum(f[None, :] * binom.pmf(k[None, :], n, np.atleast_1d(x)[:, None]), axis=1).reshape(np.shape(u))


# ---------------------------------------------------------------------------
# Korovkin-damped Chebyshev sums
# ---------------------------------------------------------------------------


def korovkin_weights(n: int) -> np.ndarray:
    """rho_{n,k} = sum_q sin((q+1)pi/(n+2)) sin((q+k+1)pi/(n+2)) / sum_q sin^2."""
    if n < 1:
        raise DomainError("n must be >= 1")
    q = np.arange(n + 1)
    s = np.sin((q + 1) * math.pi / (n + 2))
    den = float(np.dot(s, s))
    out = np.empty(n + 1)
    for k in range(n + 1):
        out[k] = float(np.dot(s[: n + 1 - k], s[k:])) / den
    out[0] = 1.0
    out[1] = math.cos(math.pi / (n + 2))
    return out


def cos_poly(k: int) -> np.ndarray:
    """Monomial coefficients of p_k with p_k(cos t) = cos(k t), by recurrence."""
    if k < 0:
        raise DomainError("k must be >= 0")
    prev, cur = np.array([1.0]), np.array([0.0, 1.0])
    if k == 0:
        return prev
    for _ in range(k - 1):
        nxt = P.polysub(P.polymulx(2.0 * cur), np.pad(prev, (0, 2)))
        prev, cur = cur, nxt[: len(cur) + 1]
    return cur


def cos_poly_closed(k: int) -> np.ndarray:
    """Same polynomial from the binomial double sum nu(k, q) (cross-check)."""
    if k == 0:
        return np.array([1.0])
    h = k // 2
    out = np.zeros(k + 1)
    for q in range(h + 1):
        nu = (-1) ** (h - q) * sum(math.comb(k, 2 * (h - t)) * math.comb(h - t, h - q) for t in range(q + 1))
        out[2 * q + (k % 2)] = nu
    return out


def fourier_coeffs(cost: SampledCost, n: int, N: Optional[int] = None) -> np.ndarray:
    """Re alpha_k = (1/pi) int_0^pi c(tau(1+cos t)/2) cos(k t) dt, k = 0..n."""
    N = N or max(512, 16 * n)
    theta = (np.arange(N) + 0.5) * math.pi / N
    vals = cost(cost.tau * (1.0 + np.cos(theta)) / 2.0)
    k = np.arange(n + 1)
    return (np.cos(np.outer(k, theta)) @ vals) / N


def near_best(cost: SampledCost, n: int, N: Optional[int] = None) -> PolyApprox:
    """Korovkin-damped Chebyshev sum mapped back to a polynomial in u."""
    if n < 1:
        raise DomainError("n must be >= 1")
    tau = cost.tau
    alpha = fourier_coeffs(cost, n, N)
    rho = korovkin_weights(n)
    beta = alpha.copy()
    beta[1:] *= 2.0
    cheb = rho * beta  # coefficients of cos(k theta) = T_k(x)
    gamma = C.cheb2poly(cheb)  # gamma(n, t): coefficients of x^t
    coeffs = translate_coeffs(gamma, tau)
    eta = 6.0 * modulus(cost, tau / (2.0 * n))
    return PolyApprox(coeffs, eta, "near_best", tau, cheb)


def translate_coeffs(gamma: np.ndarray, tau: float) -> np.ndarray:
    """bar-gamma_k = (2/tau)^k sum_t C(t+k, k) (-1)^t gamma_{t+k}."""
    n = len(gamma) - 1
    out = np.empty(n + 1)
    for k in range(n + 1):
        s = sum(math.comb(t + k, k) * (-1) ** t * gamma[t + k] for t in range(n - k + 1))
        out[k] = (2.0 / tau) ** k * s
    return out


def theta_sum(cost: SampledCost, n: int, theta) -> np.ndarray:
    """sum_k rho_{n,k} beta_k cos(k theta) evaluated directly."""
    alpha = fourier_coeffs(cost, n)
    rho = korovkin_weights(n)
    beta = alpha.copy()
    beta[1:] *= 2.0
    theta = np.asarray(theta, dtype=float)
    k = np.arange(n + 1)
    return np.cos(np.multiply.outer(theta, k)) @ (rho * beta)


def measured_error(cost: SampledCost, approx: PolyApprox, grid: int = ERROR_GRID) -> float:
    u = np.linspace(0.0, cost.tau, grid)
    return float(np.max(np.abs(cost(u) - approx(u))))


# ---------------------------------------------------------------------------
# the quotient cost u^2/(a^2+u^2)
# ---------------------------------------------------------------------------


def quotient_cost_fn(a: float) -> Callable:
    return lambda u: np.asarray(u, dtype=float) ** 2 / (a * a + np.asarray(u, dtype=float) ** 2)


def quotient_cost_modulus(a: float, tau: float) -> Callable[[float], float]:
    """Exact omega(c; delta) on [0, tau] for c = u^2/(a^2+u^2) (increasing cost)."""
    c = quotient_cost_fn(a)

    def omega(delta: float) -> float:
        if delta >= tau:
            return float(c(tau) - c(0.0))
        h = delta / 2.0
        inner = h * h - a * a + 2.0 * math.sqrt(a**4 + a * a * h * h + h**4)
        us = min(math.sqrt(inner / 3.0), tau - h)
        return float(c(us + h) - c(us - h))

    return omega


def quotient_cost(a: float, tau: float) -> SampledCost:
    return SampledCost(quotient_cost_fn(a), tau, quotient_cost_modulus(a, tau))


def quotient_tail(a: float, tau: float) -> TailEnvelope:
    """[c(tau), 1 - (1 - c(tau)) exp(-k (u - tau))], k = c'(tau)/(1 - c(tau)).

    Valid for tau >= a, where 1 - c decays no faster than that exponential.
    """
    ct = tau * tau / (a * a + tau * tau)
    dct = 2.0 * a * a * tau / (a * a + tau * tau) ** 2
    k = dct / (1.0 - ct)
    lower = (ExpPolyTerm(ct, 0, 0.0),)
    upper = (ExpPolyTerm(1.0, 0, 0.0), ExpPolyTerm(-(1.0 - ct) * math.exp(k * tau), 0, k))
    return TailEnvelope(lower, upper)


# ---------------------------------------------------------------------------
# interval cost assembly
# ---------------------------------------------------------------------------


def approximate(cost: SampledCost, n: int, method: str = "near_best") -> PolyApprox:
    if method == "near_best":
        return near_best(cost, n)
    if method == "bernstein":
        return bernstein(cost, n)
    raise DomainError(f"unknown approximation method {method!r}")


def interval_cost(cost: SampledCost, tau: float, n: int, tail: TailEnvelope, method: str = "near_best"):
    """(lower, upper) PiecewiseCostSpec enclosing the cost on the half-line."""
    if abs(cost.tau - tau) > 0:
        cost = cost.with_tau(tau)
    approx = approximate(cost, n, method)
    sig = list(approx.coeffs)
    lo = PiecewiseCostSpec.from_polynomial([sig[0] - approx.eta] + sig[1:], tau, tail=list(tail.lower))
    hi = PiecewiseCostSpec.from_polynomial([sig[0] + approx.eta] + sig[1:], tau, tail=list(tail.upper))
    return lo, hi, approx


# ---------------------------------------------------------------------------
# periodic costs
# ---------------------------------------------------------------------------


def periodic_fourier(fn: Callable, period: float, n: int, N: Optional[int] = None) -> np.ndarray:
    """alpha_k = (1/T) int_0^T c(u) e^{-i 2 pi k u / T} du, k = 0..n (trapezoid)."""
    N = N or max(512, 16 * n)
    u = np.arange(N) * period / N
    vals = np.asarray(fn(u), dtype=float) * np.ones(N)
    k = np.arange(n + 1)
    return np.exp(-2j * math.pi * np.outer(k, u) / period) @ vals / N


def periodic_trig_terms(fn: Callable, period: float, n: int) -> list[ExpPolyTerm]:
    """Korovkin-damped trigonometric sum as exp-poly terms (conjugate pairs)."""
    alpha = periodic_fourier(fn, period, n)
    rho = korovkin_weights(n)
    terms = [ExpPolyTerm(alpha[0].real, 0, 0.0)]
    for k in range(1, n + 1):
        a = -2j * math.pi * k / period  # e^{-a u} = e^{+i 2 pi k u / T}
        terms.append(ExpPolyTerm(rho[k] * alpha[k], 0, a))
        terms.append(ExpPolyTerm(rho[k] * np.conj(alpha[k]), 0, -a))
    return terms


def periodic_bounds(spec: QueueSpec, fn: Callable, period: float, n: int, omega: Optional[float] = None) -> IntervalFn:
    """Interval w for a periodic cost from its damped Fourier sum plus Jackson slack.

    The slack on the cost is 6 omega(c; T/(n pi)), which contributes
    +-lam/(1-rho) * slack * u to w and +-slack to the mean cost.
    """
    stability_check(spec)
    if n < 1:
        raise DomainError("n must be >= 1")
    terms = periodic_trig_terms(fn, period, n)
    if omega is None:
        omega = periodic_modulus_estimate(fn, period, period / (n * math.pi))
    slack = 6.0 * omega
    cost = ExpPolyCost(terms)
    wres = w_for_exp_poly_cost(spec, cost)
    cbar = complex(mean_cost_per_job(spec, cost, wres)).real
    K = spec.lam / (1.0 - spec.rho)
    ramp = PiecewiseExpPoly.single([ExpPolyTerm(K * slack, 1, 0.0)])
    return IntervalFn(wres.w - ramp, wres.w + ramp, Interval(cbar - slack, cbar + slack))


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"exp": np.exp, "pow": np.power, "sqrt": np.sqrt, "log": np.log, "sin": np.sin, "cos": np.cos, "abs": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expression(text: str, params: Optional[dict] = None) -> Callable:
    """Vectorized evaluator u -> value for a small arithmetic language.

    Allowed: numbers, ``u``, named parameters, pi, e, + - * / ** and the
    functions exp, pow, sqrt, log, sin, cos, abs.
    """
    params = dict(params or {})
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse cost expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            if node.id == "u" or node.id in params or node.id in _CONSTS:
                return
            raise ConfigError(f"unknown name {node.id!r} in cost expression")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            check(node.operand)
            return
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords:
            for a in node.args:
                check(a)
            return
        raise ConfigError(f"unsupported syntax in cost expression: {ast.dump(node)[:60]}")

    check(tree)

    def ev(node, u):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "u":
                return u
            return float(params[node.id]) if node.id in params else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, u), ev(node.right, u))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](ev(node.operand, u))
        return _FUNCS[node.func.id](*[ev(a, u) for a in node.args])

    body = tree.body

    def fn(u):
        u = np.asarray(u, dtype=float)
        with np.errstate(all="ignore"):
            return np.asarray(ev(body, u), dtype=float) * np.ones(u.shape)

    fn.expression = text
    return fn
