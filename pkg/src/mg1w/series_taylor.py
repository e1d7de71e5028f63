"""Germs at zero: the Toeplitz filter from cost derivatives to w' derivatives.

If c has derivatives c~_j = c^{(j)}(0) then

    w^{(k+1)}(0) = lam/(1-rho) sum_q y_q c~_{k+q}

and the inverse map is c~_k = w~_k/lam - sum_t x_{t+1} w~_{t+k}. Infinite sums
are truncated with a geometric majorant; germs grow like |p_W|^{-q}, so all
long sums run on rescaled sequences to stay inside double range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DivergentSeries, DomainError
from .numerics import Interval
from .service_models import Deterministic, Erlang, QueueSpec, stability_check
from .waiting_time import dominant_pole, germ_at_zero
from .wfunction_core import ExpPolyTerm, Piece, PiecewiseExpPoly

TAIL_TOL = 1e-12
N_MAX = 4000
WITNESS = (30, 40)


@dataclass(frozen=True)
class Germ:
    """Unscaled derivatives at zero, coeffs[k] = f^{(k)}(0)."""

    coeffs: np.ndarray

    def __init__(self, coeffs):
        arr = np.asarray(coeffs, dtype=complex)
        if arr.ndim != 1 or arr.size < 1:
            raise DomainError("germ needs at least one coefficient")
        if not np.all(np.isfinite(arr)):
            raise DomainError("germ entries must be finite")
        object.__setattr__(self, "coeffs", arr)

    def __len__(self):
        return self.coeffs.size

    def __getitem__(self, k):
        return self.coeffs[k]

    @property
    def real(self) -> np.ndarray:
        return self.coeffs.real


class ExpPolyGermSource:
    """Derivatives at zero of sum kappa u^m e^{-au}, available to any order.

    ``scaled(j, r)`` returns c^{(j)}(0) / r^j without forming r^j.
    """

    def __init__(self, terms: Sequence[ExpPolyTerm]):
        self.terms = tuple(terms)

    def __call__(self, j: int) -> complex:
        return self.scaled(j, 1.0)

    def scaled(self, j: int, r: float) -> complex:
        acc = 0j
        for t in self.terms:
            if j < t.m:
                continue
            # j!/(j-m)! (-a)^{j-m} / r^j
            ff = math.perm(j, t.m) if j < 170 else math.exp(math.lgamma(j + 1) - math.lgamma(j - t.m + 1))
            acc += t.kappa * ff / r**t.m * (-t.a / r) ** (j - t.m)
        return acc

    def germ(self, n: int) -> Germ:
        return Germ([self(j) for j in range(n)])

    @property
    def type_sigma(self) -> float:
        """Exponential type max |a| (growth order 1)."""
        return max((abs(t.a) for t in self.terms), default=0.0)


class Convergence(Enum):
    CONVERGES = "converges"
    DIVERGES = "diverges"
    MARGINAL = "marginal"


@dataclass(frozen=True)
class GrowthClass:
    order: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.order < 0 or self.sigma < 0:
            raise DomainError("growth order and type must be nonnegative")


@dataclass(frozen=True)
class DerivativeBounds:
    """Bounds on Re and Im of c^{(n+1)} valid on the whole half-line."""

    alpha: Interval
    beta: Optional[Interval] = None


@dataclass
class IntervalFn:
    """Lower and upper w-functions plus an interval for the mean cost."""

    lower: PiecewiseExpPoly
    upper: PiecewiseExpPoly
    mean_cost: Interval
    imag_lower: Optional[PiecewiseExpPoly] = None
    imag_upper: Optional[PiecewiseExpPoly] = None

    def __call__(self, u) -> tuple:
        lo = np.real(self.lower.evaluate(u))
        hi = np.real(self.upper.evaluate(u))
        return lo, hi

    def width(self, u):
        lo, hi = self(u)
        return hi - lo


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def pole_radius(spec: QueueSpec, which: str = "w") -> float:
    """|p_W| for the forward filter, |p_D| for the inverse (inf if D* is entire)."""
    if which == "w":
        return abs(dominant_pole(spec))
    if which == "d":
        p = spec.model.lst_pole
        return math.inf if p is None else abs(p)
    raise DomainError("which must be 'w' or 'd'")


def convergence_classify(spec: QueueSpec, growth: GrowthClass, which: str = "w", tol: float = 1e-9) -> Convergence:
    """Series of w' germs (which='w') or cost germs (which='d') converge?"""
    R = pole_radius(spec, which)
    if growth.order < 1:
        return Convergence.CONVERGES
    if growth.order > 1:
        return Convergence.DIVERGES if math.isfinite(R) else Convergence.CONVERGES
    if not math.isfinite(R):
        return Convergence.CONVERGES
    if abs(growth.sigma - R) <= tol:
        return Convergence.MARGINAL
    return Convergence.CONVERGES if growth.sigma < R else Convergence.DIVERGES


def estimate_growth_type(germ: Germ, tail: int = 10) -> float:
    """Advisory estimate of the exponential type from |c~_k|^{1/k}."""
    c = np.abs(germ.coeffs)
    ks = [k for k in range(max(1, len(c) - tail), len(c)) if c[k] > 0]
    if not ks:
        return 0.0
    return float(np.mean([c[k] ** (1.0 / k) for k in ks]))


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


def toeplitz_filter_matrix(spec: QueueSpec, n: int) -> np.ndarray:
    """Y^(n) = lam/(1-rho) [y_{j-i}]_{j >= i}, upper triangular n x n."""
    y = germ_at_zero(spec, n).coeffs
    c = spec.lam / (1.0 - spec.rho)
    Y = np.zeros((n, n))
    for i in range(n):
        Y[i, i:] = c * y[: n - i]
    return Y


def moment_matrix(spec: QueueSpec, n: int) -> np.ndarray:
    """M^(n) = [x_{j-i+1}]_{j >= i}, upper triangular n x n."""
    x = np.array([spec.x(k) for k in range(n + 1)])
    M = np.zeros((n, n))
    for i in range(n):
        M[i, i:] = x[1 : n - i + 1]
    return M


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


def scaled_germ(spec: QueueSpec, N: int, r: float) -> np.ndarray:
    """Y_k = y_k r^k by the rescaled germ recursion."""
    stability_check(spec)
    lam, rho = spec.lam, spec.rho
    c = lam / (1.0 - rho)
    # x_j r^{j-1}, computed through logs when large
    xs = np.zeros(N + 2)
    for j in range(1, N + 2):
        xs[j] = _x_scaled(spec, j, r)
    Y = np.zeros(N + 1)
    Y[0] = 1.0
    for k in range(1, N + 1):
        t = np.arange(k)
        Y[k] = c * float(np.dot(xs[k - t + 1], Y[:k]))
    return Y


def _x_scaled(spec: QueueSpec, j: int, r: float) -> float:
    """x_j r^{j-1} = E[D^j] r^{j-1} / j!."""
    m = spec.model
    if isinstance(m, Deterministic):
        lg = j * math.log(m.d) - math.lgamma(j + 1)
    elif isinstance(m, Erlang):
        lg = math.lgamma(j + m.q) - math.lgamma(m.q) - j * math.log(m.omega) - math.lgamma(j + 1)
    else:
        raise DomainError("unsupported model")
    return math.exp(lg + (j - 1) * math.log(r))


def _finite_filter(spec: QueueSpec, c: np.ndarray, n: int) -> np.ndarray:
    y = germ_at_zero(spec, max(n, len(c))).coeffs
    k = spec.lam / (1.0 - spec.rho)
    out = np.zeros(n, dtype=complex)
    for i in range(n):
        m = len(c) - i
        if m > 0:
            out[i] = k * np.dot(y[:m], c[i:])
    return out


def filter_germ(spec: QueueSpec, cost_germ, n: int, growth: Optional[GrowthClass] = None) -> Germ:
    """Germ of w' at zero (n entries) from the cost germ.

    ``cost_germ`` is either a finite :class:`Germ` (treated as the germ of a
    polynomial cost, summed exactly) or a source with ``scaled(j, r)``
    (an entire cost, summed to tolerance with divergence detection).
    """
    stability_check(spec)
    if n < 1:
        raise DomainError("need n >= 1")
    if isinstance(cost_germ, Germ) or isinstance(cost_germ, (list, tuple, np.ndarray)):
        c = cost_germ.coeffs if isinstance(cost_germ, Germ) else np.asarray(cost_germ, dtype=complex)
        return Germ(_finite_filter(spec, c, n))
    if growth is not None and convergence_classify(spec, growth) is Convergence.MARGINAL:
        raise DivergentSeries("growth type equals |p_W|: convergence undetermined (marginal case)")
    return Germ(_infinite_filter(spec, cost_germ, n))


def _infinite_filter(spec: QueueSpec, src, n: int) -> np.ndarray:
    r = abs(dominant_pole(spec))
    k0 = spec.lam / (1.0 - spec.rho)
    Y = None
    N = 64
    out = np.zeros(n, dtype=complex)
    while True:
        Y = scaled_germ(spec, N + n, r)
        C = np.array([src.scaled(j, r) for j in range(N + n + 1)])
        done = True
        for i in range(n):
            terms = Y[: N + 1] * C[i : i + N + 1]
            partial = np.cumsum(terms)
            _check_divergence(partial, i)
            status, value = _converged(terms, partial)
            if not status:
                done = False
                break
            out[i] = k0 * r**i * value
        if done:
            return out
        if N >= N_MAX:
            raise DivergentSeries(
                f"germ series did not reach tolerance within {N_MAX} terms",
                witness=np.abs(partial[WITNESS[0] : WITNESS[1] + 1]) * k0,
                indices=range(WITNESS[0], WITNESS[1] + 1),
            )
        N = min(2 * N, N_MAX)


def _check_divergence(partial: np.ndarray, i: int) -> None:
    lo, hi = WITNESS
    if partial.size <= hi:
        return
    mags = np.abs(partial[hi - 9 : hi + 1])
    inc = np.all(np.diff(mags) > 0)
    terms = np.abs(np.diff(partial[lo : hi + 1]))
    not_decaying = terms[-1] >= terms[0]
    if inc and not_decaying:
        raise DivergentSeries(
            f"germ series for w'^({i}) diverges: partial sums grow over indices {lo}..{hi}",
            witness=np.abs(partial[lo : hi + 1]),
            indices=range(lo, hi + 1),
        )


def _converged(terms: np.ndarray, partial: np.ndarray):
    """Geometric-majorant tail test on the last terms."""
    a = np.abs(terms)
    scale = max(abs(partial[-1]), 1e-300)
    last = a[-1]
    if last == 0 and np.all(a[-5:] == 0):
        return True, partial[-1]
    # ratio from the last stretch of terms (robust to zeros and sign patterns)
    win = a[-12:]
    nz = win[win > 0]
    if nz.size < 2:
        return True, partial[-1]
    ratio = (nz[-1] / nz[0]) ** (1.0 / (nz.size - 1))
    if ratio >= 1.0:
        return False, None
    tail = nz[-1] * ratio / (1.0 - ratio)
    if tail <= TAIL_TOL * scale:
        return True, partial[-1]
    return False, None


def inverse_filter_germ(spec: QueueSpec, w_germ, n: int) -> Germ:
    """Cost germ from the germ of w': c~_k = w~_k/lam - sum_t x_{t+1} w~_{t+k}.

    A finite germ is inverted exactly through the truncated Toeplitz system;
    a source with ``scaled(j, r)`` is summed to tolerance.
    """
    stability_check(spec)
    lam = spec.lam
    if isinstance(w_germ, Germ) or isinstance(w_germ, (list, tuple, np.ndarray)):
        g = w_germ.coeffs if isinstance(w_germ, Germ) else np.asarray(w_germ, dtype=complex)
        L = len(g)
        x = np.array([spec.x(k) for k in range(L + 1)])
        out = np.zeros(n, dtype=complex)
        for k in range(min(n, L)):
            m = L - k
            out[k] = g[k] / lam - np.dot(x[1 : m + 1], g[k : k + m])
        return Germ(out)
    # infinite: x_{t+1} w~_{t+k}; scale by rD = |p_D| (1 for entire D*)
    R = pole_radius(spec, "d")
    r = R if math.isfinite(R) else 1.0
    out = np.zeros(n, dtype=complex)
    N = 64
    while True:
        xs = np.array([_x_scaled(spec, t + 1, r) * r for t in range(N + 1)])  # x_{t+1} r^{t+1}
        ok = True
        for k in range(n):
            G = np.array([w_germ.scaled(t + k, r) for t in range(N + 1)])  # w~_{t+k} / r^{t+k}
            terms = xs * G
            partial = np.cumsum(terms)
            _check_divergence(partial, k)
            status, val = _converged(terms, partial)
            if not status:
                ok = False
                break
            # terms carry x_{t+1} w~_{t+k} r^{1-k}
            out[k] = w_germ.scaled(k, 1.0) / lam - val * r ** (k - 1)
        if ok:
            return Germ(out)
        if N >= N_MAX:
            raise DivergentSeries("inverse germ series did not converge")
        N = min(2 * N, N_MAX)


class SaturatingWGerm:
    """Germ of w' for cost 1 - e^{-au} in closed form (any model).

    w~_k = lam/(1-rho) (delta_k - (-a)^k W*(a)).
    """

    def __init__(self, spec: QueueSpec, a: float):
        from .waiting_time import pk_lst

        self.spec = spec
        self.a = a
        self.wa = pk_lst(spec, a)
        self.k = spec.lam / (1.0 - spec.rho)

    def scaled(self, j: int, r: float) -> complex:
        d = 1.0 if j == 0 else 0.0
        return self.k * (d - (-self.a / r) ** j * self.wa)


# ---------------------------------------------------------------------------
# Taylor partial sums and polynomial bounds
# ---------------------------------------------------------------------------


def taylor_w(w_germ: Germ, u):
    """sum_k w~_k u^{k+1}/(k+1)!."""
    u = np.asarray(u, dtype=float)
    acc = np.zeros(u.shape, dtype=complex)
    term = np.ones(u.shape)
    for k, g in enumerate(w_germ.coeffs):
        term = term * u / (k + 1)
        acc = acc + g * term
    return acc


def polynomial_bounds(spec: QueueSpec, cost_germ: Germ, dbounds: DerivativeBounds) -> IntervalFn:
    """Interval polynomials enclosing w from c^{(0..n)}(0) and bounds on c^{(n+1)}.

    w(u) in lam/(1-rho) [ sum_j u^{j+1}/(j+1)! sum_{t<=n-j} y_t c~_{j+t}
                          + [alpha] sum_{k<=n+1} y_{n+1-k} u^{k+1}/(k+1)! ].
    """
    stability_check(spec)
    c = np.asarray(cost_germ.coeffs, dtype=complex)
    n = len(c) - 1
    y = germ_at_zero(spec, n + 1).coeffs
    K = spec.lam / (1.0 - spec.rho)
    main = []
    for j in range(n + 1):
        s = np.dot(y[: n - j + 1], c[j : n + 1])
        main.append(K * s / math.factorial(j + 1))  # coefficient of u^{j+1}
    rem = [K * y[n + 1 - k] / math.factorial(k + 1) for k in range(n + 2)]  # coefficient of u^{k+1}

    def poly(coef_main, factor, part):
        terms = []
        for j, v in enumerate(coef_main):
            terms.append(ExpPolyTerm(part(v), j + 1, 0.0))
        for k, v in enumerate(rem):
            terms.append(ExpPolyTerm(factor * v, k + 1, 0.0))
        return PiecewiseExpPoly.single(terms)

    al = dbounds.alpha
    lower = poly(main, al.lo, lambda v: v.real)
    upper = poly(main, al.hi, lambda v: v.real)
    # E[c(W)] = (1-rho)/lam w'(0) encloses in E[T_n(W)] + [alpha] y_{n+1}
    ecw = float(np.dot(y[: n + 1], c.real[: n + 1]))
    mc = Interval(ecw + al.lo * y[n + 1], ecw + al.hi * y[n + 1])
    il = iu = None
    if dbounds.beta is not None:
        be = dbounds.beta
        il = poly(main, be.lo, lambda v: v.imag)
        iu = poly(main, be.hi, lambda v: v.imag)
    return IntervalFn(lower, upper, mc, il, iu)


def exp_decay_derivative_bounds(a: float, n: int) -> DerivativeBounds:
    """Bounds on d^{n+1}/du^{n+1} (1 - e^{-au}) = -(-a)^{n+1} e^{-au} on u >= 0."""
    v = a ** (n + 1)
    if (n + 1) % 2 == 1:
        return DerivativeBounds(Interval(0.0, v))
    return DerivativeBounds(Interval(-v, 0.0))
