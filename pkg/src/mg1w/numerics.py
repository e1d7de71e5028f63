"""Small numerical kernels shared by the rest of the package.

Contents: closed intervals, truncated power series ("jets") used to pull
residues out of meromorphic transforms, the integer-order upper incomplete
gamma function, the lower real branch of Lambert W, and the two families of
scenario counts that appear in the deterministic and Erlang waiting-time
series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, SingularExpansion


# ---------------------------------------------------------------------------
# intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Closed real interval ``[lo, hi]``.

    No directed rounding is performed; callers that need a guaranteed
    enclosure widen the result with :meth:`widen`.
    """

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise DomainError("interval bound is NaN")
        if lo > hi:
            raise DomainError(f"malformed interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(x, x)

    @classmethod
    def hull(cls, values: Iterable[float]) -> "Interval":
        vals = list(values)
        return cls(min(vals), max(vals))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def widen(self, eps: float) -> "Interval":
        return Interval(self.lo - eps, self.hi + eps)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo + other.lo, self.hi + other.hi)
        return Interval(self.lo + other, self.hi + other)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo - other.hi, self.hi - other.lo)
        return Interval(self.lo - other, self.hi - other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, k: float) -> "Interval":
        a, b = self.lo * k, self.hi * k
        return Interval(min(a, b), max(a, b))

    def __mul__(self, k):
        if isinstance(k, Interval):
            prods = (self.lo * k.lo, self.lo * k.hi, self.hi * k.lo, self.hi * k.hi)
            return Interval(min(prods), max(prods))
        return self.scale(k)

    __rmul__ = __mul__


def iv_add(a: Interval, b: Interval) -> Interval:
    return a + b


def iv_sub(a: Interval, b: Interval) -> Interval:
    return a - b


def iv_scale(a: Interval, k: float) -> Interval:
    return a.scale(k)


def iv_contains(a: Interval, x: float) -> bool:
    return a.contains(x)


def iv_lt(a: Interval, b: Interval) -> bool:
    """Strict dominance: every point of ``a`` lies below every point of ``b``."""
    return a.hi < b.lo


def iv_width(a: Interval) -> float:
    return a.width


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def upper_incomplete_gamma_int(q: int, x: complex) -> complex:
    """Gamma(q+1, x) = q! e^{-x} sum_{j<=q} x^j/j! for integer q >= 0."""
    if q < 0:
        raise DomainError("q must be a nonnegative integer")
    term = 1.0 + 0j
    acc = term
    for j in range(1, q + 1):
        term = term * x / j
        acc += term
    val = math.factorial(q) * np.exp(-x) * acc
    if isinstance(x, (int, float)) or (isinstance(x, np.floating)):
        return float(val.real)
    return complex(val)


def integrator(q: int, a: complex, lo: float, hi: float) -> complex:
    """Definite integral of t^q/q! e^{-a t} over [lo, hi].

    Uses the incomplete-gamma closed form for a != 0 and the polynomial
    branch for a == 0.
    """
    if a == 0:
        return (hi ** (q + 1) - lo ** (q + 1)) / math.factorial(q + 1)
    if abs(a) * max(abs(lo), abs(hi)) < 0.5:
        # the difference of two gamma values cancels badly here; sum the series
        return _integrator_series(q, a, lo, hi)
    g = upper_incomplete_gamma_int
    return (g(q, a * lo) - g(q, a * hi)) / (math.factorial(q) * a ** (q + 1))


def _integrator_series(q, a, lo, hi):
    # int t^q/q! sum_j (-a t)^j/j! dt
    acc = 0j
    for j in range(0, 200):
        c = (-a) ** j / math.factorial(j) / math.factorial(q) / (q + j + 1)
        t = c * (hi ** (q + j + 1) - lo ** (q + j + 1))
        acc += t
        if j > 4 and abs(t) < 1e-18 * max(abs(acc), 1e-300):
            break
    return acc if isinstance(a, complex) and a.imag != 0 else acc.real


def lambert_w_minus1(x: float, tol: float = 1e-13) -> float:
    """Real branch W_{-1} of the Lambert function on [-1/e, 0)."""
    x = float(x)
    lo_dom = -math.exp(-1.0)
    if not (lo_dom - 1e-15 <= x < 0.0):
        raise DomainError(f"lambert_w_minus1 defined on [-1/e, 0), got {x}")
    if x <= lo_dom:
        return -1.0
    f = lambda w: w * math.exp(w) - x
    # w e^w is decreasing on (-inf, -1] from 0- to -1/e
    lo, hi = -50.0, -1.0
    while f(lo) < 0:  # x closer to 0 than -50 e^{-50}
        lo *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * abs(mid):
            break
    w = 0.5 * (lo + hi)
    for _ in range(50):
        ew = math.exp(w)
        step = (w * ew - x) / (ew * (w + 1.0))
        if not math.isfinite(step):
            break
        w_new = w - step
        if w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        if abs(w_new - w) <= tol * abs(w):
            w = w_new
            break
        w = w_new
    return w


# ---------------------------------------------------------------------------
# scenario counts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioTable:
    """Table of scenario counts indexed by ``(m, n)`` with ``n >= 2m``.

    ``values[m, n]`` holds phi(m,n)/n! for the deterministic table
    (``normalized=True``) or theta_q(m,n) itself for the Erlang table.
    Entries with ``n < 2m`` are structurally zero and reported absent.
    """

    values: np.ndarray
    normalized: bool
    shape_q: int | None = None

    @property
    def m_max(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_max(self) -> int:
        return self.values.shape[1] - 1

    def __contains__(self, key) -> bool:
        m, n = key
        return 1 <= m <= self.m_max and 2 * m <= n <= self.n_max

    def __getitem__(self, key) -> float:
        m, n = key
        if not 0 <= n <= self.n_max:
            raise KeyError(key)
        if m < 1 or m > self.m_max or n < 2 * m:
            return 0.0
        return float(self.values[m, n])

    def count(self, m: int, n: int) -> float:
        """The raw count (multiplies back the n! for normalized tables)."""
        v = self[m, n]
        return v * math.factorial(n) if self.normalized else v


def scenario_counts(m_max: int, n_max: int) -> ScenarioTable:
    """phi(m,n)/n! via the normalized convolution recursion.

    phi(m,n) counts placements of n distinct objects into m labelled urns
    with at least two objects per urn.
    """
    if m_max < 1 or n_max < 2 * m_max:
        raise DomainError("need m_max >= 1 and n_max >= 2 m_max")
    v = np.zeros((m_max + 1, n_max + 1))
    inv_fact = np.array([1.0 / math.factorial(k) for k in range(n_max + 1)])
    v[1, 2:] = inv_fact[2:]
    for m in range(1, m_max):
        for n in range(2 * m + 2, n_max + 1):
            p = np.arange(2 * m, n - 1)
            v[m + 1, n] = float(np.dot(inv_fact[n - p], v[m, p]))
    return ScenarioTable(v, normalized=True)


def erlang_scenario_counts(q: int, m_max: int, n_max: int) -> ScenarioTable:
    """theta_q(m,n) via theta_q(m+1,n) = sum_p C(q+n-p-1, q-1) theta_q(m,p)."""
    if q < 1:
        raise DomainError("shape q must be >= 1")
    if m_max < 1 or n_max < 2 * m_max:
        raise DomainError("need m_max >= 1 and n_max >= 2 m_max")
    v = np.zeros((m_max + 1, n_max + 1))
    b = np.array([float(math.comb(k + q - 1, q - 1)) for k in range(n_max + 1)])
    v[1, 2:] = b[2:]
    for m in range(1, m_max):
        for n in range(2 * m + 2, n_max + 1):
            p = np.arange(2 * m, n - 1)
            v[m + 1, n] = float(np.dot(b[n - p], v[m, p]))
    return ScenarioTable(v, normalized=False, shape_q=q)


def scenario_refinement_residual(table: ScenarioTable) -> float:
    """Largest relative violation of phi(m,n+1) = m phi(m,n) + m n phi(m-1,n-1).

    Written for the normalized table, where it reads
    phi~(m,n+1) = m/(n+1) (phi~(m,n) + phi~(m-1,n-1)) with phi~(0,0) = 1.
    """
    if not table.normalized:
        raise DomainError("refinement identity applies to the deterministic table")

    def get(m, n):
        if m == 0:
            return 1.0 if n == 0 else 0.0
        return table[m, n]

    worst = 0.0
    for m in range(1, table.m_max + 1):
        for n in range(2 * m - 1, table.n_max):
            lhs = get(m, n + 1)
            rhs = m / (n + 1) * (get(m, n) + get(m - 1, n - 1))
            if lhs == 0 and rhs == 0:
                continue
            worst = max(worst, abs(lhs - rhs) / abs(lhs))
    return worst


# ---------------------------------------------------------------------------
# jets
# ---------------------------------------------------------------------------


class Jet:
    """Truncated Taylor expansion sum_k c_k h^k, k = 0..K, about a point s0.

    All arithmetic truncates at the common order. The expansion point is
    carried only for bookkeeping; operands must share it.
    """

    __slots__ = ("coeffs", "at")

    def __init__(self, coeffs: Sequence[complex], at: complex = 0.0):
        self.coeffs = np.asarray(coeffs, dtype=complex).copy()
        if self.coeffs.ndim != 1 or self.coeffs.size == 0:
            raise DomainError("jet needs a nonempty 1-d coefficient vector")
        self.at = at

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @classmethod
    def constant(cls, c: complex, K: int, at: complex = 0.0) -> "Jet":
        v = np.zeros(K + 1, dtype=complex)
        v[0] = c
        return cls(v, at)

    @classmethod
    def variable(cls, at: complex, K: int) -> "Jet":
        """The identity function s expanded at ``at``."""
        v = np.zeros(K + 1, dtype=complex)
        v[0] = at
        if K >= 1:
            v[1] = 1.0
        return cls(v, at)

    @classmethod
    def exp_linear(cls, alpha: complex, at: complex, K: int) -> "Jet":
        """Jet of e^{alpha s} at ``at``."""
        v = np.empty(K + 1, dtype=complex)
        v[0] = np.exp(alpha * at)
        for k in range(1, K + 1):
            v[k] = v[k - 1] * alpha / k
        return cls(v, at)

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.order != self.order:
                K = min(self.order, other.order)
                return Jet(self.coeffs[: K + 1], self.at), Jet(other.coeffs[: K + 1], self.at)
            return self, other
        return self, Jet.constant(other, self.order, self.at)

    def __add__(self, other):
        a, b = self._coerce(other)
        return Jet(a.coeffs + b.coeffs, a.at)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.at)

    def __sub__(self, other):
        a, b = self._coerce(other)
        return Jet(a.coeffs - b.coeffs, a.at)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs * other, self.at)
        a, b = self._coerce(other)
        K = a.order
        return Jet(np.convolve(a.coeffs, b.coeffs)[: K + 1], a.at)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        c = self.coeffs
        if c[0] == 0:
            raise SingularExpansion("division by a jet with zero leading coefficient")
        K = self.order
        r = np.zeros(K + 1, dtype=complex)
        r[0] = 1.0 / c[0]
        for k in range(1, K + 1):
            r[k] = -np.dot(c[1 : k + 1], r[k - 1 :: -1][:k]) / c[0]
        return Jet(r, self.at)

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs / other, self.at)
        a, b = self._coerce(other)
        return a * b.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def exp(self) -> "Jet":
        c = self.coeffs
        K = self.order
        g = np.zeros(K + 1, dtype=complex)
        g[0] = np.exp(c[0])
        for n in range(1, K + 1):
            k = np.arange(1, n + 1)
            g[n] = np.dot(k * c[1 : n + 1], g[n - 1 :: -1][:n]) / n
        return Jet(g, self.at)

    def __pow__(self, p: int) -> "Jet":
        if not isinstance(p, (int, np.integer)):
            raise DomainError("only integer jet powers are supported")
        if p < 0:
            return self.reciprocal() ** (-p)
        out = Jet.constant(1.0, self.order, self.at)
        base = self
        while p:
            if p & 1:
                out = out * base
            base = base * base
            p >>= 1
        return out

    def shift_pow(self, k: int) -> "Jet":
        """Multiply (k > 0) or divide (k < 0) by h^k.

        Division drops the leading |k| coefficients, which must vanish up to
        rounding, and lowers the order by |k|.
        """
        if k >= 0:
            v = np.zeros(self.order + 1, dtype=complex)
            v[k:] = self.coeffs[: self.order + 1 - k]
            return Jet(v, self.at)
        k = -k
        if k > self.order:
            raise SingularExpansion("shift exceeds jet order")
        return Jet(self.coeffs[k:], self.at)

    def truncate(self, K: int) -> "Jet":
        return Jet(self.coeffs[: K + 1], self.at)

    def __repr__(self):
        return f"Jet(at={self.at!r}, coeffs={self.coeffs!r})"


def jet_mul(a: Jet, b: Jet) -> Jet:
    return a * b


def jet_div(a: Jet, b: Jet) -> Jet:
    return a / b


def jet_exp(a: Jet) -> Jet:
    return a.exp()


def jet_shift_pow(a: Jet, k: int) -> Jet:
    return a.shift_pow(k)


def jet_of_rational(p: complex, degree: int, K: int, at: complex) -> Jet:
    """Jet at ``at`` of (s - p)^(-degree); ``at`` must differ from ``p``."""
    z = at - p
    if z == 0:
        raise SingularExpansion("expansion point coincides with the pole")
    v = np.empty(K + 1, dtype=complex)
    v[0] = z ** (-degree)
    for j in range(1, K + 1):
        # binomial(-degree, j) z^{-degree-j}
        v[j] = v[j - 1] * (-degree - j + 1) / j / z
    return Jet(v, at)


def residue_from_jet(regular: Jet, degree: int) -> complex:
    """Residue of f at a pole of given degree from the jet of (s-p)^degree f."""
    if degree < 1:
        return 0j
    return complex(regular.coeffs[degree - 1])
