"""Exponential-polynomial closed forms for w-functions.

A w-function is represented exactly as a :class:`PiecewiseExpPoly`: on every
piece ``[tau_lo, tau_hi)`` the function equals
``const + sum kappa * x**m * exp(-a*x)`` with the *local* coordinate
``x = u - tau_lo``. Local coordinates keep the exponentials bounded on far
pieces; on the first piece (``tau_lo = 0``) local and absolute forms agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import AdmissibilityError, DomainError, UnsupportedModel
from .numerics import integrator
from .service_models import Deterministic, Erlang, QueueSpec, stability_check
from .waiting_time import dominant_pole, germ_at_point, germ_at_zero

A_ZERO_SNAP = 1e-13
IMAG_SNAP = 1e-12


def _snap_rate(a: complex) -> complex:
    a = complex(a)
    if abs(a.imag) < IMAG_SNAP:
        a = complex(a.real, 0.0)
    if abs(a) < A_ZERO_SNAP:
        a = 0j
    return a


@dataclass(frozen=True)
class ExpPolyTerm:
    """kappa * u**m * exp(-a*u)."""

    kappa: complex
    m: int
    a: complex = 0.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 0:
            raise DomainError("exponent m must be a nonnegative integer")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "a", _snap_rate(self.a))
        object.__setattr__(self, "kappa", complex(self.kappa))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return self.kappa * u**self.m * np.exp(-self.a * u)


def canonical_terms(terms: Iterable[ExpPolyTerm]) -> tuple[ExpPolyTerm, ...]:
    """Merge terms sharing (m, a) and drop zero coefficients."""
    acc: dict[tuple[int, complex], complex] = {}
    for t in terms:
        key = (t.m, _snap_rate(t.a))
        acc[key] = acc.get(key, 0j) + complex(t.kappa)
    out = [ExpPolyTerm(k, m, a) for (m, a), k in acc.items() if k != 0]
    out.sort(key=lambda t: (t.a.real, t.a.imag, t.m))
    return tuple(out)


def rebase_terms(terms: Sequence[ExpPolyTerm], delta: float) -> list[ExpPolyTerm]:
    """Re-express terms in x' = x - delta.

    kappa (x'+delta)^m e^{-a(x'+delta)} expanded binomially.
    """
    if delta == 0:
        return list(terms)
    out = []
    for t in terms:
        f = t.kappa * np.exp(-t.a * delta)
        for j in range(t.m + 1):
            out.append(ExpPolyTerm(f * math.comb(t.m, j) * delta ** (t.m - j), j, t.a))
    return out


def _split_const(terms: Iterable[ExpPolyTerm]) -> tuple[list[ExpPolyTerm], complex]:
    const = 0j
    rest = []
    for t in terms:
        if t.m == 0 and t.a == 0:
            const += t.kappa
        else:
            rest.append(t)
    return rest, const


def _fmt_scalar(z: complex):
    z = complex(z)
    if z.imag == 0:
        return z.real
    return {"re": z.real, "im": z.imag}


def _parse_scalar(v) -> complex:
    if isinstance(v, dict):
        return complex(float(v["re"]), float(v["im"]))
    return complex(float(v), 0.0)


@dataclass(frozen=True)
class Piece:
    tau_lo: float
    tau_hi: float
    terms: tuple[ExpPolyTerm, ...] = ()
    const: complex = 0j

    def eval_local(self, x: np.ndarray) -> np.ndarray:
        out = np.full(x.shape, complex(self.const))
        for t in self.terms:
            if t.m == 0:
                out = out + t.kappa * np.exp(-t.a * x)
            else:
                out = out + t.kappa * x**t.m * np.exp(-t.a * x)
        return out


class PiecewiseExpPoly:
    """Piecewise exponential polynomial on [0, inf) with right-open pieces."""

    __slots__ = ("pieces",)

    def __init__(self, pieces: Sequence[Piece]):
        pieces = tuple(pieces)
        if not pieces:
            raise DomainError("need at least one piece")
        if pieces[0].tau_lo != 0.0:
            raise DomainError("first piece must start at 0")
        if not math.isinf(pieces[-1].tau_hi):
            raise DomainError("last piece must extend to infinity")
        for p, q in zip(pieces, pieces[1:]):
            if p.tau_hi != q.tau_lo or not p.tau_lo < p.tau_hi:
                raise DomainError("pieces must be contiguous and nonempty")
        self.pieces = tuple(
            Piece(float(p.tau_lo), float(p.tau_hi), canonical_terms(p.terms), complex(p.const))
            for p in pieces
        )

    # -- construction -----------------------------------------------------
    @classmethod
    def single(cls, terms: Iterable[ExpPolyTerm], const: complex = 0.0) -> "PiecewiseExpPoly":
        rest, c = _split_const(terms)
        return cls([Piece(0.0, math.inf, tuple(rest), complex(const) + c)])

    @classmethod
    def zero(cls) -> "PiecewiseExpPoly":
        return cls([Piece(0.0, math.inf)])

    @classmethod
    def from_absolute(cls, breaks: Sequence[float], piece_terms: Sequence[Sequence[ExpPolyTerm]]):
        """Build from terms written in the absolute variable u on each piece."""
        edges = [0.0, *breaks, math.inf]
        pieces = []
        for lo, hi, terms in zip(edges, edges[1:], piece_terms):
            rest, c = _split_const(rebase_terms(list(terms), lo))
            pieces.append(Piece(lo, hi, tuple(rest), c))
        return cls(pieces)

    # -- queries ----------------------------------------------------------
    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(p.tau_lo for p in self.pieces[1:])

    def __call__(self, u):
        return self.evaluate(u)

    def evaluate(self, u):
        """Complex values at ``u`` (scalar or array)."""
        scalar = np.ndim(u) == 0
        uu = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.zeros(uu.shape, dtype=complex)
        for p in self.pieces:
            mask = (uu >= p.tau_lo) & (uu < p.tau_hi)
            if mask.any():
                out[mask] = p.eval_local(uu[mask] - p.tau_lo)
        return complex(out[0]) if scalar else out

    def evaluate_real(self, u):
        v = self.evaluate(u)
        return np.real(v) if not np.isscalar(v) else v.real

    def left_limit(self, u: float) -> complex:
        """Value approached from the left at ``u`` > 0."""
        for p in self.pieces:
            if p.tau_lo < u <= p.tau_hi:
                return complex(p.eval_local(np.array([u - p.tau_lo]))[0])
        raise DomainError("left limit needs u > 0")

    def jumps(self) -> list[tuple[float, complex]]:
        return [(b, self.evaluate(b) - self.left_limit(b)) for b in self.breakpoints]

    def max_jump(self, relative: bool = True) -> float:
        worst = 0.0
        for b, j in self.jumps():
            scale = 1.0 + abs(self.evaluate(b)) if relative else 1.0
            worst = max(worst, abs(j) / scale)
        return worst

    # -- algebra ----------------------------------------------------------
    def scale(self, k: complex) -> "PiecewiseExpPoly":
        return PiecewiseExpPoly(
            [Piece(p.tau_lo, p.tau_hi, tuple(ExpPolyTerm(t.kappa * k, t.m, t.a) for t in p.terms), p.const * k) for p in self.pieces]
        )

    def __mul__(self, k):
        return self.scale(k)

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def refine(self, breaks: Iterable[float]) -> "PiecewiseExpPoly":
        """Same function with extra breakpoints inserted."""
        edges = sorted(set(self.breakpoints) | {float(b) for b in breaks if 0 < b < math.inf})
        edges = [0.0, *edges, math.inf]
        pieces = []
        for lo, hi in zip(edges, edges[1:]):
            src = self._piece_at(lo)
            delta = lo - src.tau_lo
            rest, c = _split_const(rebase_terms(list(src.terms), delta))
            pieces.append(Piece(lo, hi, tuple(rest), src.const + c))
        return PiecewiseExpPoly(pieces)

    def _piece_at(self, u: float) -> Piece:
        for p in self.pieces:
            if p.tau_lo <= u < p.tau_hi:
                return p
        return self.pieces[-1]

    def __add__(self, other):
        if not isinstance(other, PiecewiseExpPoly):
            return PiecewiseExpPoly([Piece(p.tau_lo, p.tau_hi, p.terms, p.const + other) for p in self.pieces])
        brk = set(self.breakpoints) | set(other.breakpoints)
        a, b = self.refine(brk), other.refine(brk)
        return PiecewiseExpPoly(
            [Piece(p.tau_lo, p.tau_hi, p.terms + q.terms, p.const + q.const) for p, q in zip(a.pieces, b.pieces)]
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, PiecewiseExpPoly) else -other)

    def restrict_tail(self, tau: float) -> "PiecewiseExpPoly":
        """Zero on [0, tau), unchanged on [tau, inf)."""
        r = self.refine([tau])
        return PiecewiseExpPoly([p if p.tau_lo >= tau else Piece(p.tau_lo, p.tau_hi) for p in r.pieces])

    # -- calculus ---------------------------------------------------------
    def derivative(self) -> "PiecewiseExpPoly":
        pieces = []
        for p in self.pieces:
            terms = []
            for t in p.terms:
                if t.m:
                    terms.append(ExpPolyTerm(t.kappa * t.m, t.m - 1, t.a))
                if t.a != 0:
                    terms.append(ExpPolyTerm(-t.a * t.kappa, t.m, t.a))
            rest, c = _split_const(terms)
            pieces.append(Piece(p.tau_lo, p.tau_hi, tuple(rest), c))
        return PiecewiseExpPoly(pieces)

    def antiderivative(self, start: complex = 0.0) -> "PiecewiseExpPoly":
        """The continuous antiderivative F with F(0) = ``start``."""
        pieces = []
        level = complex(start)
        for p in self.pieces:
            terms, c = _antiderivative_local(p.terms, p.const)
            piece = Piece(p.tau_lo, p.tau_hi, tuple(terms), c + level)
            pieces.append(piece)
            if math.isfinite(p.tau_hi):
                level = complex(piece.eval_local(np.array([p.tau_hi - p.tau_lo]))[0])
        return PiecewiseExpPoly(pieces)

    def integrate(self, lo: float, hi: float) -> complex:
        """Definite integral over [lo, hi] using the Gamma-branch integrator."""
        if hi < lo:
            return -self.integrate(hi, lo)
        total = 0j
        for p in self.pieces:
            a, b = max(lo, p.tau_lo), min(hi, p.tau_hi)
            if b <= a:
                continue
            xa, xb = a - p.tau_lo, b - p.tau_lo
            total += p.const * (xb - xa)
            for t in p.terms:
                total += t.kappa * math.factorial(t.m) * integrator(t.m, t.a, xa, xb)
        return total

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "pieces": [
                {
                    "tau_lo": p.tau_lo,
                    "tau_hi": p.tau_hi if math.isfinite(p.tau_hi) else "inf",
                    "terms": [
                        {"kappa_re": t.kappa.real, "kappa_im": t.kappa.imag, "m": t.m, "a_re": t.a.real, "a_im": t.a.imag}
                        for t in p.terms
                    ],
                    "const": _fmt_scalar(p.const),
                }
                for p in self.pieces
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseExpPoly":
        pieces = []
        for rec in d["pieces"]:
            hi = rec["tau_hi"]
            hi = math.inf if hi in ("inf", "Infinity", None) else float(hi)
            terms = tuple(
                ExpPolyTerm(complex(t["kappa_re"], t["kappa_im"]), int(t["m"]), complex(t["a_re"], t["a_im"]))
                for t in rec["terms"]
            )
            pieces.append(Piece(float(rec["tau_lo"]), hi, terms, _parse_scalar(rec["const"])))
        return cls(pieces)

    def __eq__(self, other):
        return isinstance(other, PiecewiseExpPoly) and self.pieces == other.pieces

    def __repr__(self):
        return f"PiecewiseExpPoly({len(self.pieces)} pieces, breaks={self.breakpoints})"


def _antiderivative_local(terms: Sequence[ExpPolyTerm], const: complex):
    """Terms and constant of x -> int_0^x (const + sum terms)."""
    out: list[ExpPolyTerm] = []
    c0 = 0j
    if const != 0:
        out.append(ExpPolyTerm(const, 1, 0.0))
    for t in terms:
        m, a, k = t.m, t.a, t.kappa
        if a == 0:
            out.append(ExpPolyTerm(k / (m + 1), m + 1, 0.0))
            continue
        mf = math.factorial(m)
        c0 += k * mf / a ** (m + 1)
        for j in range(m + 1):
            out.append(ExpPolyTerm(-k * mf / math.factorial(j) / a ** (m + 1 - j), j, a))
    return out, c0


def evaluate(pw: PiecewiseExpPoly, u):
    return pw.evaluate(u)


def differentiate(pw: PiecewiseExpPoly) -> PiecewiseExpPoly:
    return pw.derivative()


def antiderivative(pw: PiecewiseExpPoly) -> PiecewiseExpPoly:
    return pw.antiderivative()


# ---------------------------------------------------------------------------
# costs and w-functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpPolyCost:
    """Cost sum kappa u^m e^{-a u} on [0, inf), optionally with a distinct c(0)."""

    terms: tuple[ExpPolyTerm, ...]
    c0: Optional[complex] = None

    def __init__(self, terms: Iterable[ExpPolyTerm], c0: Optional[complex] = None):
        object.__setattr__(self, "terms", canonical_terms(terms))
        object.__setattr__(self, "c0", c0)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape, dtype=complex)
        for t in self.terms:
            out = out + t(u)
        return out

    def right_value_at_zero(self) -> complex:
        return complex(sum(t.kappa for t in self.terms if t.m == 0))

    def value_at_zero(self) -> complex:
        return self.right_value_at_zero() if self.c0 is None else complex(self.c0)


@dataclass
class WResult:
    """w, its right derivative and the mean cost per job."""

    w: PiecewiseExpPoly
    wprime: PiecewiseExpPoly
    mean_cost: complex
    spec: QueueSpec
    cost: object = None

    def __call__(self, u):
        return self.w.evaluate(u)


def check_admissible(spec: QueueSpec, a: complex) -> None:
    """Cost term e^{-a u} needs Re(a) > p_W for E[e^{-aW}] to be finite."""
    a = complex(a)
    if a.real <= dominant_pole(spec) + 1e-14:
        raise AdmissibilityError(f"rate a = {a} is not admissible: need Re(a) > p_W = {dominant_pole(spec):.6g}")


def exp_monomial_wprime_terms(spec: QueueSpec, n: int, a: complex) -> list[ExpPolyTerm]:
    """w' of u^n e^{-au} in the absolute variable u.

    w'(u) = lam/(1-rho) n! sum_q yhat_{a:n-q} u^q/q! e^{-au}, with y in place
    of yhat when a = 0.
    """
    stability_check(spec)
    a = _snap_rate(a)
    check_admissible(spec, a)
    c = spec.lam / (1.0 - spec.rho)
    if a == 0:
        y = germ_at_zero(spec, n).coeffs
    else:
        y = germ_at_point(spec, a, n).coeffs
    nf = math.factorial(n)
    return [ExpPolyTerm(c * nf * y[n - q] / math.factorial(q), q, a) for q in range(n + 1)]


def _wresult_from_wprime(spec, wprime: PiecewiseExpPoly, cost) -> WResult:
    w = wprime.antiderivative()
    res = WResult(w=w, wprime=wprime, mean_cost=0j, spec=spec, cost=cost)
    res.mean_cost = mean_cost_from_w(spec, res, cost)
    return res


def w_table1(spec: QueueSpec, n: int, a: complex = 0.0) -> WResult:
    """w-function of the single cost u^n e^{-au}."""
    wp = PiecewiseExpPoly.single(exp_monomial_wprime_terms(spec, n, a))
    return _wresult_from_wprime(spec, wp, ExpPolyCost([ExpPolyTerm(1.0, n, a)]))


def w_for_exp_poly_cost(spec: QueueSpec, cost) -> WResult:
    """w-function of a finite exponential-polynomial combination (by linearity)."""
    if not isinstance(cost, ExpPolyCost):
        cost = ExpPolyCost(cost)
    terms = []
    for t in cost.terms:
        for s in exp_monomial_wprime_terms(spec, t.m, t.a):
            terms.append(ExpPolyTerm(t.kappa * s.kappa, s.m, s.a))
    wp = PiecewiseExpPoly.single(terms)
    return _wresult_from_wprime(spec, wp, cost)


def expected_w_of_service(spec: QueueSpec, w: PiecewiseExpPoly, model=None) -> complex:
    """E[w(D)] for the given service model, integrated exactly piece by piece."""
    model = spec.model if model is None else model
    if isinstance(model, Deterministic):
        return w.evaluate(model.d)
    if isinstance(model, Erlang):
        q, om = model.q, model.omega
        # density om^q t^{q-1} e^{-om t}/(q-1)!, t = tau_lo + x
        norm = om**q / math.factorial(q - 1)
        total = 0j
        for p in w.pieces:
            width = p.tau_hi - p.tau_lo
            e0 = math.exp(-om * p.tau_lo)
            if e0 == 0.0:
                continue
            for j in range(q):
                bj = math.comb(q - 1, j) * p.tau_lo ** (q - 1 - j)
                items = [(p.const, 0, 0j)] + [(t.kappa, t.m, t.a) for t in p.terms]
                for k, m, a in items:
                    r = a + om
                    if math.isinf(width):
                        val = math.factorial(m + j) / r ** (m + j + 1)
                    else:
                        val = math.factorial(m + j) * integrator(m + j, r, 0.0, width)
                    total += norm * e0 * bj * k * val
        return total
    raise UnsupportedModel(type(model).__name__)


def mean_cost_from_w(spec: QueueSpec, wres: WResult, cost) -> complex:
    """Mean cost per job from w' (0+) plus the jump and setup corrections.

    c-bar = [(1-rho)(c(0) - c+(0)) + E[c+(W)] + (1-rho)(E[w(D0)] - E[w(D)])] / (1-rho+rho0)
    with E[c+(W)] = (1-rho)/lam * w'(0+).
    """
    lam, rho = spec.lam, spec.rho
    ecw = (1.0 - rho) / lam * wres.wprime.evaluate(0.0)
    jump = 0j
    if cost is not None and hasattr(cost, "value_at_zero"):
        jump = (1.0 - rho) * (cost.value_at_zero() - cost.right_value_at_zero())
    setup = 0j
    if spec.has_setup:
        setup = (1.0 - rho) * (
            expected_w_of_service(spec, wres.w, spec.model0) - expected_w_of_service(spec, wres.w, spec.model)
        )
    return complex((jump + ecw + setup) / (1.0 - rho + spec.rho0))


def mean_cost_per_job(spec: QueueSpec, cost, wres: Optional[WResult] = None) -> complex:
    """Mean cost per job for an exp-poly or piecewise cost."""
    if wres is None:
        if isinstance(cost, ExpPolyCost) or isinstance(cost, (list, tuple)):
            wres = w_for_exp_poly_cost(spec, cost)
        else:
            from .piecewise import w_piecewise

            wres = w_piecewise(spec, cost)
        return wres.mean_cost
    return mean_cost_from_w(spec, wres, cost)


def relative_value(spec: QueueSpec, wres: WResult, u):
    """v(u) - v(0) = w(u) - lam c-bar u / (1 - rho)."""
    return wres.w.evaluate(u) - spec.lam * wres.mean_cost * np.asarray(u) / (1.0 - spec.rho)


def admission_cost(spec: QueueSpec, wres: WResult, u, d):
    """w(u+d) - w(u) - lam c-bar d / (1 - rho)."""
    u = np.asarray(u, dtype=float)
    return wres.w.evaluate(u + d) - wres.w.evaluate(u) - spec.lam * wres.mean_cost * d / (1.0 - spec.rho)
