"""Interval admission costs and greedy dispatching across several queues.

For a server without setup times the admission cost of a job of size d at
backlog u is a signed integral of the cost,

    A(u, d) = lam/(1-rho) * int c dmu,   mu = K(z) dz - d dF_W(z),
    K(z) = F_W(z - u) - F_W(z - u - d),

because w(u) = lam/(1-rho) int c(z) [F_W(z) - F_W(z-u)] dz and
c-bar = E[c(W)]. mu has zero total mass, so a cost known only up to
c_mid +- h moves A by at most lam/(1-rho) int h d|mu|. Integrals are done by
panelled Gauss-Legendre quadrature split at the kinks of K, which keeps
high-degree polynomial interiors stable where monomial w-functions are not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .approx_uniform import PolyApprox, SampledCost, TailEnvelope, approximate, interval_cost
from .errors import DomainError, UnsupportedModel
from .numerics import Interval
from .piecewise import w_piecewise
from .service_models import QueueSpec, stability_check
from .waiting_time import dominant_pole, pole_set, waiting_cdf, waiting_density_terms
from .wfunction_core import ExpPolyCost, admission_cost, w_for_exp_poly_cost

GL_NODES = 32
PANEL = 0.5
PAD = 1e-10
TAU_MAX = 16.0
N_MAX = 64


@dataclass
class ServerSpec:
    """One queue of the fleet.

    ``cost`` is either an :class:`ExpPolyCost` (handled exactly) or a
    callable on the half-line; ``tail(tau)`` returns the envelope valid
    beyond tau for the latter.
    """

    id: str
    spec: QueueSpec
    cost: object
    tail: Optional[Callable[[float], TailEnvelope]] = None
    method: str = "near_best"
    modulus: Optional[Callable[[float, float], float]] = None  # (tau, delta) -> omega
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        stability_check(self.spec)
        if self.spec.has_setup:
            raise UnsupportedModel("dispatching servers must not have a distinct setup service law")
        if not isinstance(self.cost, ExpPolyCost) and self.tail is None:
            raise DomainError(f"server {self.id}: a sampled cost needs a tail envelope")

    @property
    def exact(self) -> bool:
        return isinstance(self.cost, ExpPolyCost)

    def sampled(self, tau: float) -> SampledCost:
        mod = None if self.modulus is None else (lambda delta, tau=tau: self.modulus(tau, delta))
        return SampledCost(self.cost, tau, mod)


def split_fleet(lam: float, probs: Sequence[float]) -> list[float]:
    """Per-server Poisson rates under a random split."""
    if abs(sum(probs) - 1.0) > 1e-12 or min(probs) < 0:
        raise DomainError("split probabilities must be nonnegative and sum to one")
    return [lam * p for p in probs]


@dataclass
class DecisionRecord:
    intervals: dict
    winner: Optional[str]
    survivors: list
    trace: list = field(default_factory=list)
    rounds: int = 0
    n_star: Optional[int] = None


# ---------------------------------------------------------------------------
# waiting-time law and quadrature
# ---------------------------------------------------------------------------


class _WaitLaw:
    """Atom at zero plus continuous density of the stationary waiting time."""

    def __init__(self, spec: QueueSpec):
        self.spec = spec
        self.atom = 1.0 - spec.rho
        self.decay = -dominant_pole(spec)
        try:
            self.terms = waiting_density_terms(spec)
        except UnsupportedModel:
            self.terms = None

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.terms is None:
            return waiting_cdf(self.spec, x)
        xs = np.maximum(x, 0.0)
        tail = np.zeros(x.shape, dtype=complex)
        for coef, r, p in self.terms:
            a = -p
            z = a * xs
            acc = np.ones(z.shape, dtype=complex)
            term = np.ones(z.shape, dtype=complex)
            for j in range(1, r + 1):
                term = term * z / j
                acc = acc + term
            tail = tail + coef * math.factorial(r) * np.exp(-z) * acc / a ** (r + 1)
        return np.where(x >= 0, 1.0 - tail.real, 0.0)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.terms is None:
            h = 1e-6
            return (self.cdf(x + h) - self.cdf(np.maximum(x - h, 0.0))) / (x + h - np.maximum(x - h, 0.0))
        out = np.zeros(x.shape, dtype=complex)
        for coef, r, p in self.terms:
            out = out + coef * x**r * np.exp(p * x)
        return np.where(x > 0, out.real, 0.0)


@lru_cache(maxsize=64)
def _law(spec: QueueSpec) -> _WaitLaw:
    return _WaitLaw(spec)


def _gl(n: int = GL_NODES):
    return np.polynomial.legendre.leggauss(n)


def _panels(lo: float, hi: float, breaks: Sequence[float], hmax: float = PANEL):
    """Gauss-Legendre nodes and weights on [lo, hi] split at breaks."""
    pts = sorted({lo, hi, *[b for b in breaks if lo < b < hi]})
    x0, w0 = _gl()
    zs, ws = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(math.ceil((b - a) / hmax)))
        edges = np.linspace(a, b, m + 1)
        for e0, e1 in zip(edges[:-1], edges[1:]):
            half = 0.5 * (e1 - e0)
            zs.append(e0 + half * (x0 + 1.0))
            ws.append(half * w0)
    if not zs:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(zs), np.concatenate(ws)


@lru_cache(maxsize=8192)
def _kernel(spec: QueueSpec, u: float, d: float, tau: float) -> "_Kernel":
    return _Kernel(spec, u, d, tau)


class _Kernel:
    """Quadrature of int g dmu split into [0, tau) and [tau, inf)."""

    def __init__(self, spec: QueueSpec, u: float, d: float, tau: float):
        law = _law(spec)
        self.factor = spec.lam / (1.0 - spec.rho)
        self.d = d
        self.atom = law.atom
        horizon = tau + u + d + 40.0 / law.decay
        brk = [u, u + d, tau]
        z, w = _panels(0.0, horizon, brk)
        K = law.cdf(z - u) - law.cdf(z - u - d)
        dens = K - d * law.density(z)
        inner = z < tau
        self.z_in, self.w_in, self.m_in = z[inner], w[inner], dens[inner]
        self.z_out, self.w_out, self.m_out = z[~inner], w[~inner], dens[~inner]

    def signed(self, g_in, g_out, g0) -> float:
        """int g dmu with g0 = g(0) charged on the atom."""
        s = np.dot(self.w_in, g_in * self.m_in) + np.dot(self.w_out, g_out * self.m_out)
        return float(self.factor * (s - self.d * self.atom * g0))

    def tv_inner(self) -> float:
        return float(self.factor * (np.dot(self.w_in, np.abs(self.m_in)) + self.d * self.atom))

    def tv_outer(self, h_out) -> float:
        return float(self.factor * np.dot(self.w_out, h_out * np.abs(self.m_out)))


# ---------------------------------------------------------------------------
# admission intervals
# ---------------------------------------------------------------------------


def _approx(server: ServerSpec, tau: float, n: int) -> PolyApprox:
    key = (float(tau), int(n))
    if key not in server._cache:
        server._cache[key] = approximate(server.sampled(tau), n, server.method)
    return server._cache[key]


def exact_admission(server: ServerSpec, u: float, d: float) -> float:
    """Closed-form admission cost for an exp-poly cost."""
    if not server.exact:
        raise DomainError("exact admission cost needs an exp-poly cost")
    wres = w_for_exp_poly_cost(server.spec, server.cost)
    return float(np.real(admission_cost(server.spec, wres, u, d)))


def tail_halfwidth(server: ServerSpec, u: float, d: float, tau: float) -> float:
    """Contribution of the tail envelope alone (interior cost zero)."""
    env = server.tail(tau)
    ker = _kernel(server.spec, float(u), float(d), float(tau))
    lo, hi = env.evaluate(ker.z_out)
    return ker.tv_outer(0.5 * (hi - lo))


def interior_halfwidth(server: ServerSpec, u: float, d: float, tau: float, eta: float) -> float:
    return eta * _kernel(server.spec, float(u), float(d), float(tau)).tv_inner()


def admission_interval(server: ServerSpec, u: float, d: float, tau: float = 2.0, n: int = 10, mode: str = "coupled") -> Interval:
    """Interval containing A(u, d) given the cost approximation at (tau, n)."""
    if d < 0 or u < 0:
        raise DomainError("u and d must be nonnegative")
    if server.exact:
        a = exact_admission(server, u, d)
        return Interval(a, a)
    if mode == "w_difference":
        return _w_interval_difference(server, u, d, tau, n)
    approx = _approx(server, tau, n)
    env = server.tail(tau)
    ker = _kernel(server.spec, float(u), float(d), float(tau))
    c_in = approx(ker.z_in)
    lo_out, hi_out = env.evaluate(ker.z_out)
    c0 = float(approx(np.array([0.0]))[0])
    if mode == "coupled":
        mid = ker.signed(c_in, 0.5 * (lo_out + hi_out), c0)
        half = approx.eta * ker.tv_inner() + ker.tv_outer(0.5 * (hi_out - lo_out)) + PAD
        return Interval(mid - half, mid + half)
    if mode == "naive":
        eta = approx.eta
        f = ker.factor
        K_in = ker.m_in + d * _law(server.spec).density(ker.z_in)
        K_out = ker.m_out + d * _law(server.spec).density(ker.z_out)
        f_in = (K_in - ker.m_in) / d if d > 0 else np.zeros_like(K_in)
        f_out = (K_out - ker.m_out) / d if d > 0 else np.zeros_like(K_out)

        def parts(g_in, g_out, g0):
            intk = np.dot(ker.w_in, g_in * K_in) + np.dot(ker.w_out, g_out * K_out)
            cbar = np.dot(ker.w_in, g_in * f_in) + np.dot(ker.w_out, g_out * f_out) + ker.atom * g0
            return intk, cbar

        k_lo, cb_lo = parts(c_in - eta, lo_out, c0 - eta)
        k_hi, cb_hi = parts(c_in + eta, hi_out, c0 + eta)
        return Interval(f * (k_lo - d * cb_hi) - PAD, f * (k_hi - d * cb_lo) + PAD)
    raise DomainError(f"unknown interval mode {mode!r}")


def _w_interval_difference(server: ServerSpec, u: float, d: float, tau: float, n: int) -> Interval:
    """[w](u+d) - [w](u) - lam d [c-bar]/(1-rho) from interval w-functions."""
    lo_spec, hi_spec, _ = interval_cost(server.sampled(tau), tau, n, server.tail(tau), server.method)
    wl = w_piecewise(server.spec, lo_spec)
    wh = w_piecewise(server.spec, hi_spec)
    k = server.spec.lam * d / (1.0 - server.spec.rho)
    lo = float(np.real(wl(u + d)) - np.real(wh(u)) - k * np.real(wh.mean_cost))
    hi = float(np.real(wh(u + d)) - np.real(wl(u)) - k * np.real(wl.mean_cost))
    return Interval(lo - PAD, hi + PAD)


# ---------------------------------------------------------------------------
# Algorithm: refine until one server dominates
# ---------------------------------------------------------------------------


def eps_schedule(eps0: float = 0.5, tmax: int = 12) -> list[float]:
    return [eps0 * 2.0**-t for t in range(tmax + 1)]


def _choose_tau(server: ServerSpec, u: float, d: float, target: float, tau0: float, tau_max: float) -> float:
    """Smallest tau (doubling then bisection) with tail width <= target."""
    if server.exact:
        return tau0
    tau = tau0
    if 2 * tail_halfwidth(server, u, d, tau) <= target:
        return tau
    while tau < tau_max:
        prev, tau = tau, min(2.0 * tau, tau_max)
        if 2 * tail_halfwidth(server, u, d, tau) <= target:
            lo, hi = prev, tau
            for _ in range(4):
                mid = 0.5 * (lo + hi)
                if 2 * tail_halfwidth(server, u, d, mid) <= target:
                    hi = mid
                else:
                    lo = mid
            return hi
    return tau_max


def _choose_n(server: ServerSpec, u: float, d: float, tau: float, target: float, n_max: int) -> int:
    """Smallest n in 1, 2, 4, ... with interior width <= target."""
    if server.exact:
        return 0
    tv = _kernel(server.spec, float(u), float(d), float(tau)).tv_inner()
    n = 1
    while n < n_max:
        if 2 * _approx(server, tau, n).eta * tv <= target:
            return n
        n *= 2
    return n_max


def dominance(intervals: dict) -> list:
    """Servers not strictly dominated: i survives unless some hi_j < lo_i."""
    keys = list(intervals)
    return [i for i in keys if not any(intervals[j].hi < intervals[i].lo for j in keys if j != i)]


def dispatch_decide(
    fleet: Sequence[ServerSpec],
    u: Sequence[float],
    d: Sequence[float],
    eps: Optional[Sequence[float]] = None,
    tau0: float = 1.0,
    tau_max: float = TAU_MAX,
    n_max: int = N_MAX,
    mode: str = "coupled",
) -> DecisionRecord:
    """Refine every server's admission interval over the eps schedule until one wins."""
    if not (len(fleet) == len(u) == len(d)):
        raise DomainError("fleet, u and d must have equal length")
    eps = eps_schedule() if eps is None else list(eps)
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise DomainError("eps schedule must be strictly decreasing")
    trace = []
    alive = [s.id for s in fleet]
    by_id = {s.id: (s, ui, di) for s, ui, di in zip(fleet, u, d)}
    if len(by_id) != len(fleet):
        raise DomainError("server ids must be unique")
    intervals: dict = {}
    prev_step = None
    for t, e in enumerate(eps):
        step = {}
        for sid in alive:
            s, ui, di = by_id[sid]
            tau = _choose_tau(s, ui, di, e / 2.0, tau0, tau_max)
            n = _choose_n(s, ui, di, tau, e / 4.0, n_max)
            new = admission_interval(s, ui, di, tau, max(n, 1), mode)
            # every round encloses the same number, so keep the intersection
            intervals[sid] = _intersect(intervals.get(sid), new)
            step[sid] = (tau, n)
        trace.append((t, e, step))
        alive = dominance({k: intervals[k] for k in alive})
        if len(alive) == 1:
            n_star = _minimal_order(by_id, step, mode, n_max)
            return DecisionRecord(dict(intervals), alive[0], alive, trace, t + 1, n_star)
        if prev_step is not None and all(step.get(k) == prev_step.get(k) for k in alive):
            # budget saturated: further rounds would repeat the same intervals
            break
        prev_step = step
    return DecisionRecord(dict(intervals), None, alive, trace, len(trace), None)


def _intersect(old: Optional[Interval], new: Interval) -> Interval:
    if old is None:
        return new
    lo, hi = max(old.lo, new.lo), min(old.hi, new.hi)
    if lo > hi:
        # cannot happen for valid enclosures beyond rounding; keep the newer one
        return new
    return Interval(lo, hi)


def _minimal_order(by_id: dict, step: dict, mode: str, n_max: int) -> int:
    """Smallest n in 1, 2, 4, ... separating the servers at the deciding taus."""
    chosen = max(n for _, n in step.values())
    n = 1
    while n <= max(chosen, 1):
        ivs = {}
        for sid, (tau, _) in step.items():
            s, ui, di = by_id[sid]
            ivs[sid] = admission_interval(s, ui, di, tau, n, mode)
        if len(dominance(ivs)) == 1:
            return n
        n *= 2
    return chosen


def policy_map(fleet: Sequence[ServerSpec], grid: np.ndarray, d: Sequence[float], **kw) -> list[dict]:
    """Decision at every point of grid x grid (two-server fleets)."""
    if len(fleet) != 2:
        raise DomainError("policy maps are drawn for two-server fleets")
    rows = []
    for u1 in grid:
        for u2 in grid:
            rec = dispatch_decide(fleet, [float(u1), float(u2)], d, **kw)
            rows.append(
                {
                    "u1": float(u1),
                    "u2": float(u2),
                    "winner": rec.winner if rec.winner is not None else "unresolved",
                    "n_star": rec.n_star if rec.n_star is not None else -1,
                    "rounds": rec.rounds,
                }
            )
    return rows


def write_policy_csv(rows: list[dict], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=["u1", "u2", "winner", "n_star", "rounds"], lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)
