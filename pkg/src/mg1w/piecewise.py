"""w-functions of two-piece costs.

The cost ``sum sigma_j u^j`` on [0, tau) followed by an exponential
polynomial tail on [tau, inf) is written as a signed sum of *blocks*
``u^m e^{-au} 1[tau, inf)``. The right derivative of the w-function of a
block is

* on [tau, inf): the closed form of the full-line cost u^m e^{-au};
* on [0, tau), finite pole set: minus the residues of
  W*(-s) psi(s) e^{s(u-tau)} at the poles of W*(-s), where psi is the
  Laplace transform of the block shifted to the origin;
* on [0, tau), deterministic service: in the backlog cell with index
  M = ceil((tau-u)/d), the residues at -lam (order M) and -a of
  lam^M (s+lam)^{-M} W*(-s) psi(s) e^{s x}, x the offset inside the cell.

Residues are read off jets, never from hand-expanded derivative formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CellOverflow, DomainError, UnsupportedModel
from .numerics import Jet, jet_of_rational
from .service_models import Deterministic, Erlang, QueueSpec, stability_check
from .waiting_time import pole_regular_jet, pole_set, wstar_neg_jet
from .wfunction_core import (
    ExpPolyTerm,
    Piece,
    PiecewiseExpPoly,
    WResult,
    _split_const,
    canonical_terms,
    check_admissible,
    mean_cost_from_w,
    rebase_terms,
    exp_monomial_wprime_terms,
)

MAX_CELLS = 2048


@dataclass(frozen=True)
class PiecewiseCostSpec:
    """Cost = interior terms on [0, tau) and tail terms on [tau, inf).

    Terms are exponential polynomials in the absolute backlog ``u``. The
    common case of a polynomial interior is built by :meth:`from_polynomial`.
    ``c0`` overrides the cost charged at exactly zero backlog.
    """

    tau: float
    interior: tuple[ExpPolyTerm, ...] = ()
    tail: tuple[ExpPolyTerm, ...] = ()
    c0: Optional[complex] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("breakpoint tau must be positive")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "interior", canonical_terms(self.interior))
        object.__setattr__(self, "tail", canonical_terms(self.tail))

    @classmethod
    def from_polynomial(cls, sigma: Sequence[float], tau: float, tail=None, c0=None) -> "PiecewiseCostSpec":
        """``tail`` is a list of ExpPolyTerm or a single (kappa, k, a) triple."""
        interior = [ExpPolyTerm(s, j, 0.0) for j, s in enumerate(sigma) if s != 0]
        if tail is None:
            tail_terms = []
        elif isinstance(tail, tuple) and len(tail) == 3 and not isinstance(tail[0], ExpPolyTerm):
            kappa, k, a = tail
            tail_terms = [ExpPolyTerm(kappa, k, a)] if kappa != 0 else []
        else:
            tail_terms = list(tail)
        return cls(tau, tuple(interior), tuple(tail_terms), c0)

    @property
    def sigma(self) -> list[complex]:
        """Interior polynomial coefficients (only meaningful for pure polynomials)."""
        deg = max((t.m for t in self.interior), default=-1)
        out = [0j] * (deg + 1)
        for t in self.interior:
            if t.a != 0:
                raise DomainError("interior is not a pure polynomial")
            out[t.m] += t.kappa
        return out

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        inner = np.zeros(u.shape, dtype=complex)
        outer = np.zeros(u.shape, dtype=complex)
        for t in self.interior:
            inner = inner + t(u)
        for t in self.tail:
            outer = outer + t(u)
        return np.where(u < self.tau, inner, outer)

    def right_value_at_zero(self) -> complex:
        return complex(sum(t.kappa for t in self.interior if t.m == 0))

    def value_at_zero(self) -> complex:
        return self.right_value_at_zero() if self.c0 is None else complex(self.c0)

    def shifted(self, delta_interior: float = 0.0, tail=None) -> "PiecewiseCostSpec":
        """Copy with a constant added on the interior and optionally a new tail."""
        interior = list(self.interior) + [ExpPolyTerm(delta_interior, 0, 0.0)]
        return PiecewiseCostSpec(self.tau, tuple(interior), tuple(self.tail if tail is None else tail), self.c0)


@dataclass(frozen=True)
class ChiExpansion:
    """Residue contribution of one pole, as an exp-poly in (u - tau).

    Represents ``exp(s0 (u - tau)) * sum_r coeffs[r] (u - tau)^r / r!``.
    """

    s0: complex
    coeffs: tuple[complex, ...]
    tau: float

    def __call__(self, u):
        x = np.asarray(u, dtype=float) - self.tau
        acc = np.zeros(x.shape, dtype=complex)
        for r, c in enumerate(self.coeffs):
            acc = acc + c * x**r / math.factorial(r)
        return acc * np.exp(self.s0 * x)

    def local_terms(self, origin: float) -> list[ExpPolyTerm]:
        """Terms in the local variable u - origin."""
        shift = origin - self.tau
        terms = [ExpPolyTerm(c / math.factorial(r), r, -self.s0) for r, c in enumerate(self.coeffs)]
        return rebase_terms(terms, shift)


def shifted_laplace_jet(m: int, a: complex, tau: float, at: complex, K: int) -> Jet:
    """Jet of psi(s) = int_0^inf (x+tau)^m e^{-a(x+tau)} e^{-sx} dx at ``at``.

    psi(s) = e^{-a tau} m! sum_j tau^j / (j! (s+a)^{m-j+1}).
    """
    acc = Jet.constant(0.0, K, at)
    pref = np.exp(-a * tau) * math.factorial(m)
    for j in range(m + 1):
        acc = acc + jet_of_rational(-a, m - j + 1, K, at) * (pref * tau**j / math.factorial(j))
    return acc


def chi_expansion(spec: QueueSpec, pole, m: int, a: complex, tau: float) -> ChiExpansion:
    """Residue of W*(-s) psi(s) e^{s(u-tau)} at s = -pole.p, via jets."""
    P = -pole.p
    D = pole.degree
    reg = pole_regular_jet(spec, pole.p, D, D - 1)
    psi = shifted_laplace_jet(m, a, tau, P, D - 1)
    G = (reg * psi).coeffs
    # Res = e^{P(u-tau)} sum_r (u-tau)^r/r! G_{D-1-r}
    return ChiExpansion(P, tuple(complex(G[D - 1 - r]) for r in range(D)), tau)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


def _tail_piece_terms(spec: QueueSpec, m: int, a: complex, tau: float) -> tuple[list[ExpPolyTerm], complex]:
    terms = exp_monomial_wprime_terms(spec, m, a)
    return _split_const(rebase_terms(terms, tau))


def block_wprime_finite(spec: QueueSpec, m: int, a: complex, tau: float) -> PiecewiseExpPoly:
    """w' of u^m e^{-au} 1[tau, inf) for exponential or Erlang service."""
    check_admissible(spec, a)
    c = spec.lam / (1.0 - spec.rho)
    left: list[ExpPolyTerm] = []
    for pole in pole_set(spec):
        chi = chi_expansion(spec, pole, m, a, tau)
        for t in chi.local_terms(0.0):
            left.append(ExpPolyTerm(-c * t.kappa, t.m, t.a))
    lrest, lc = _split_const(left)
    rrest, rc = _tail_piece_terms(spec, m, a, tau)
    return PiecewiseExpPoly([Piece(0.0, tau, tuple(lrest), lc), Piece(tau, math.inf, tuple(rrest), rc)])


@lru_cache(maxsize=4096)
def _md1_cell_terms(spec: QueueSpec, m: int, a: complex, tau: float, M: int) -> tuple[ExpPolyTerm, ...]:
    """E[c(u+W)] inside backlog cell M, in the local variable x = u - (tau - M d)."""
    lam = spec.lam
    z1 = -lam
    z2 = -a
    out: list[ExpPolyTerm] = []
    merged = abs(z1 - z2) < 1e-12 * max(1.0, abs(z1))
    if merged:
        # single pole at -lam of degree M + m + 1
        D = M + m + 1
        psi_reg = _psi_regular_jet(m, a, tau, z1, D - 1)
        H = wstar_neg_jet(spec, z1, D - 1) * psi_reg * lam**M
        out += _residue_terms(H, D, z1)
        return tuple(out)
    # pole at -lam of degree M
    K = M - 1
    H1 = wstar_neg_jet(spec, z1, K) * shifted_laplace_jet(m, a, tau, z1, K) * lam**M
    out += _residue_terms(H1, M, z1)
    # pole at -a of degree m + 1
    D2 = m + 1
    K2 = D2 - 1
    base = jet_of_rational(z1, M, K2, z2) * lam**M  # lam^M (s + lam)^{-M}
    H2 = base * wstar_neg_jet(spec, z2, K2) * _psi_regular_jet(m, a, tau, z2, K2)
    out += _residue_terms(H2, D2, z2)
    return tuple(out)


def _psi_regular_jet(m: int, a: complex, tau: float, at: complex, K: int) -> Jet:
    """Jet at ``at`` of (s+a)^{m+1} psi(s) = e^{-a tau} m! sum_j tau^j/j! (s+a)^j."""
    h = Jet.variable(at, K) + a
    acc = Jet.constant(0.0, K, at)
    pref = np.exp(-a * tau) * math.factorial(m)
    for j in range(m + 1):
        acc = acc + (h**j) * (pref * tau**j / math.factorial(j))
    return acc


def _residue_terms(H: Jet, degree: int, z: complex) -> list[ExpPolyTerm]:
    """Residue at z of H(s) (s-z)^{-degree} e^{s x} as terms in x."""
    c = H.coeffs
    return [ExpPolyTerm(c[degree - 1 - r] / math.factorial(r), r, -z) for r in range(degree)]


def block_wprime_md1(spec: QueueSpec, m: int, a: complex, tau: float) -> PiecewiseExpPoly:
    """w' of u^m e^{-au} 1[tau, inf) for deterministic service, cell by cell."""
    if not isinstance(spec.model, Deterministic):
        raise UnsupportedModel("cell construction needs deterministic service")
    check_admissible(spec, a)
    d = spec.model.d
    c = spec.lam / (1.0 - spec.rho)
    Mmax = math.ceil(tau / d - 1e-12)
    if Mmax > MAX_CELLS:
        raise CellOverflow(f"tau/d = {tau / d:.1f} needs more than {MAX_CELLS} backlog cells")
    a = complex(a)
    pieces = []
    for M in range(Mmax, 0, -1):
        origin = tau - M * d
        lo = max(0.0, origin)
        hi = tau - (M - 1) * d
        if hi <= lo:
            continue
        terms = _md1_cell_terms(spec, m, a, tau, M)
        terms = rebase_terms(list(terms), lo - origin)
        rest, cst = _split_const([ExpPolyTerm(c * t.kappa, t.m, t.a) for t in terms])
        pieces.append(Piece(lo, hi, tuple(rest), cst))
    rrest, rc = _tail_piece_terms(spec, m, a, tau)
    pieces.append(Piece(tau, math.inf, tuple(rrest), rc))
    return PiecewiseExpPoly(pieces)


def block_wprime(spec: QueueSpec, m: int, a: complex, tau: float) -> PiecewiseExpPoly:
    stability_check(spec)
    if tau == 0:
        return PiecewiseExpPoly.single(exp_monomial_wprime_terms(spec, m, a))
    if isinstance(spec.model, Deterministic):
        return block_wprime_md1(spec, m, a, tau)
    return block_wprime_finite(spec, m, a, tau)


def wprime_piecewise(spec: QueueSpec, pcost: PiecewiseCostSpec) -> PiecewiseExpPoly:
    """w' for the two-piece cost as a signed superposition of blocks."""
    tau = pcost.tau
    total = PiecewiseExpPoly.zero()
    for t in pcost.interior:
        full = PiecewiseExpPoly.single(exp_monomial_wprime_terms(spec, t.m, t.a))
        total = total + full.scale(t.kappa) - block_wprime(spec, t.m, t.a, tau).scale(t.kappa)
    for t in pcost.tail:
        total = total + block_wprime(spec, t.m, t.a, tau).scale(t.kappa)
    return total.refine([tau])


def w_piecewise(spec: QueueSpec, pcost: PiecewiseCostSpec) -> WResult:
    wp = wprime_piecewise(spec, pcost)
    w = wp.antiderivative()
    res = WResult(w=w, wprime=wp, mean_cost=0j, spec=spec, cost=pcost)
    res.mean_cost = mean_cost_from_w(spec, res, pcost)
    return res


def w_piecewise_finite(spec: QueueSpec, pcost: PiecewiseCostSpec) -> WResult:
    """Two-piece cost under exponential or Erlang service."""
    if not isinstance(spec.model, Erlang):
        raise UnsupportedModel("finite pole construction needs exponential or Erlang service")
    return w_piecewise(spec, pcost)


def w_piecewise_md1(spec: QueueSpec, pcost: PiecewiseCostSpec) -> WResult:
    """Two-piece cost under deterministic service (backlog-cell construction)."""
    if not isinstance(spec.model, Deterministic):
        raise UnsupportedModel("cell construction needs deterministic service")
    return w_piecewise(spec, pcost)


# ---------------------------------------------------------------------------
# step cost with deterministic service: independent closed form
# ---------------------------------------------------------------------------


def step_md1_wprime_value(spec: QueueSpec, tau: float, u: float) -> float:
    """lam/(1-rho) - lam sum_{k<M} (lam(u+kd-tau))^k/k! e^{-lam(u+kd-tau)} for u < tau."""
    lam, d = spec.lam, spec.model.d
    base = lam / (1.0 - lam * d)
    if u >= tau:
        return base
    M = math.ceil((tau - u) / d - 1e-12)
    acc = 0.0
    for k in range(M):
        z = lam * (u + k * d - tau)
        acc += z**k / math.factorial(k) * math.exp(-z)
    return base - lam * acc


def step_md1_value(spec: QueueSpec, tau: float, u: float) -> float:
    """Closed-form w(u) for the step cost 1[tau, inf) under deterministic service."""
    if not isinstance(spec.model, Deterministic):
        raise UnsupportedModel("step closed form needs deterministic service")
    stability_check(spec)
    lam, d = spec.lam, spec.model.d
    r = lam / (1.0 - lam * d)

    def mu(t):
        return math.ceil((tau - t) / d - 1e-12)

    def inner(t):
        m = mu(t)
        acc = 0.0
        for k in range(m):
            z = lam * (t + k * d - tau)
            acc += math.exp(-z) * sum(z**q / math.factorial(q) for q in range(k + 1))
        return m, acc

    m0, s0 = inner(0.0)
    w_tau = r * tau + m0 - s0
    if u >= tau:
        return w_tau + r * (u - tau)
    m, s = inner(u)
    return w_tau + r * (u - tau) - m + s


def w_step_md1(spec: QueueSpec, tau: float) -> WResult:
    """w-function of the step cost from its cellwise closed-form derivative."""
    if not isinstance(spec.model, Deterministic):
        raise UnsupportedModel("step closed form needs deterministic service")
    stability_check(spec)
    lam, d = spec.lam, spec.model.d
    base = lam / (1.0 - lam * d)
    Mmax = math.ceil(tau / d - 1e-12)
    pieces = []
    for M in range(Mmax, 0, -1):
        lo = max(0.0, tau - M * d)
        hi = tau - (M - 1) * d
        if hi <= lo:
            continue
        # -lam (lam(u+kd-tau))^k/k! e^{-lam(u+kd-tau)} written in x = u - lo
        terms = []
        for k in range(M):
            off = lo + k * d - tau
            lead = ExpPolyTerm(-(lam ** (k + 1)) / math.factorial(k) * math.exp(-lam * off), k, lam)
            terms += _shift_poly(lead, off)
        rest, cst = _split_const(terms)
        pieces.append(Piece(lo, hi, tuple(rest), cst + base))
    pieces.append(Piece(tau, math.inf, (), base))
    wp = PiecewiseExpPoly(pieces)
    w = wp.antiderivative()
    cost = PiecewiseCostSpec.from_polynomial([], tau, tail=(1.0, 0, 0.0))
    res = WResult(w=w, wprime=wp, mean_cost=0j, spec=spec, cost=cost)
    res.mean_cost = mean_cost_from_w(spec, res, cost)
    return res


def _shift_poly(t: ExpPolyTerm, off: float) -> list[ExpPolyTerm]:
    """kappa (x + off)^k e^{-a x} expanded in powers of x."""
    return [ExpPolyTerm(t.kappa * math.comb(t.m, j) * off ** (t.m - j), j, t.a) for j in range(t.m + 1)]
