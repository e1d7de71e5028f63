"""The twelve end-to-end acceptance checks, each returning a measured verdict.

``run_all`` is what ``mg1w verify`` prints; the test suite calls the
individual checks. ``quick=True`` shrinks simulation sizes only; tolerances
never change.
"""

from __future__ import annotations

import io
import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .approx_uniform import bernstein, measured_error, near_best, quotient_cost, quotient_cost_fn, quotient_cost_modulus, quotient_tail
from .dispatch import ServerSpec, _kernel, admission_interval, dispatch_decide, dominance
from .errors import DivergentSeries
from .numerics import erlang_scenario_counts, scenario_counts, scenario_refinement_residual
from .piecewise import PiecewiseCostSpec, step_md1_value, w_piecewise
from .series_taylor import (
    ExpPolyGermSource,
    Germ,
    SaturatingWGerm,
    exp_decay_derivative_bounds,
    filter_germ,
    inverse_filter_germ,
    moment_matrix,
    polynomial_bounds,
    taylor_w,
    toeplitz_filter_matrix,
)
from .service_models import Deterministic, Erlang, Exponential, QueueSpec
from .simulator import SimConfig, sim_busy_period, sim_discharge_cost, sim_waiting_stats
from .waiting_time import dominant_pole, germ_at_zero
from .wfunction_core import ExpPolyCost, ExpPolyTerm, w_for_exp_poly_cost


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _decay_cost(a: float) -> ExpPolyCost:
    return ExpPolyCost([ExpPolyTerm(1.0, 0, 0.0), ExpPolyTerm(-1.0, 0, a)])


def _rel(x: float, ref: float) -> float:
    return abs(x - ref) / max(abs(ref), 1e-300)


# ---------------------------------------------------------------------------


def check_closed_form_concordance(quick: bool = False) -> Result:
    spec = QueueSpec(Exponential(1.0), 0.5)
    a = 0.25
    cost = _decay_cost(a)
    us = np.array([0.5, 1.0, 2.0, 5.0])
    w_lin = np.real(w_for_exp_poly_cost(spec, cost).w.evaluate(us))
    wg = filter_germ(spec, ExpPolyGermSource(cost.terms), 40)
    w_tay = np.real(taylor_w(wg, us))
    pc = PiecewiseCostSpec(20.0, cost.terms, cost.terms)
    w_pw = np.real(w_piecewise(spec, pc).w.evaluate(us))
    rel = max(max(_rel(x, r) for x, r in zip(w_tay, w_lin)), max(_rel(x, r) for x, r in zip(w_pw, w_lin)))
    reps = 20_000 if quick else 100_000
    sc = SimConfig(spec, lambda u: 1.0 - np.exp(-a * u), seed=11, replications=reps)
    z = []
    for u, ref in zip(us, w_lin):
        est = sim_discharge_cost(sc, float(u))
        z.append(abs(est.mean - ref) / est.stderr)
    ok = rel <= 1e-8 and max(z) <= 3.0
    return Result(1, "closed-form concordance", ok, f"max rel diff {rel:.2e} (tol 1e-8), max |z| sim {max(z):.2f} (tol 3)")


def check_divergence() -> Result:
    spec = QueueSpec(Exponential(1.0), 0.5)
    try:
        filter_germ(spec, ExpPolyGermSource(_decay_cost(0.75).terms), 10)
    except DivergentSeries as exc:
        idx = list(exc.indices)
        w = np.asarray(exc.witness)
        grows = len(w) > 1 and bool(np.all(np.diff(w[-10:]) > 0))
        ok = idx[:1] == [30] and idx[-1:] == [40] and grows
        return Result(2, "divergence witness", ok, f"raised with witness indices {idx[0]}..{idx[-1]}, last partial sum {w[-1]:.3g}")
    return Result(2, "divergence witness", False, "no DivergentSeries raised")


def check_md1_step(quick: bool = False) -> Result:
    spec = QueueSpec(Deterministic(1.0), 0.5)
    tau = 2.5
    us = [0.5, 1.5, 2.0, 3.0]
    pc = PiecewiseCostSpec.from_polynomial([], tau, tail=(1.0, 0, 0.0))
    wres = w_piecewise(spec, pc)
    ref = [step_md1_value(spec, tau, u) for u in us]
    jet = [float(np.real(wres.w.evaluate(u))) for u in us]
    rel = max(_rel(x, r) for x, r in zip(jet, ref))
    jumps = 0.0
    for b in wres.w.breakpoints:
        if b > 0 and math.isfinite(b):
            jumps = max(jumps, abs(wres.w.left_limit(b) - wres.w.evaluate(b)))
    reps = 20_000 if quick else 100_000
    sc = SimConfig(spec, lambda u: (np.asarray(u) >= tau).astype(float), seed=13, replications=reps)
    z = []
    for u, r in zip(us, ref):
        est = sim_discharge_cost(sc, u)
        z.append(abs(est.mean - r) / est.stderr)
    ok = rel <= 1e-8 and jumps <= 1e-9 and max(z) <= 3.0
    return Result(3, "M/D/1 step cost", ok, f"max rel diff {rel:.2e}, max jump {jumps:.1e}, max |z| sim {max(z):.2f}")


def check_approximation_bounds() -> Result:
    cost = quotient_cost(1.0, 1.0)
    parts, ok = [], True
    errs = {}
    for n in (5, 10, 20):
        for name, fn in (("bernstein", bernstein), ("near_best", near_best)):
            ap = fn(cost, n)
            err = measured_error(cost, ap)
            errs[name, n] = err
            ok &= err <= ap.eta
            parts.append(f"{name[0]}{n}:{err:.4f}<={ap.eta:.4f}")
    ok &= errs["near_best", 20] < errs["bernstein", 20]
    return Result(4, "approximation bounds", bool(ok), " ".join(parts))


def _bounds_family(spec: QueueSpec, a: float, grid: np.ndarray, orders):
    exact = np.real(w_for_exp_poly_cost(spec, _decay_cost(a)).w.evaluate(grid))
    contained, widths = True, {}
    for n in orders:
        g = Germ([0.0] + [-((-a) ** j) for j in range(1, n + 1)])
        ib = polynomial_bounds(spec, g, exp_decay_derivative_bounds(a, n))
        lo, hi = ib(grid)
        slack = 1e-12 * np.maximum(1.0, np.abs(exact))
        contained &= bool(np.all(lo - slack <= exact) and np.all(exact <= hi + slack))
        widths[n] = float(ib.width(np.array([2.0]))[0])
    return contained, widths


def check_interval_shrinkage() -> Result:
    grid = np.linspace(0.0, 4.0, 41)
    orders = range(1, 26)
    s1 = QueueSpec(Exponential(1.0), 0.5)
    c1, w1 = _bounds_family(s1, 0.5 * (1.0 - 0.5), grid, orders)
    s2 = QueueSpec(Deterministic(1.0), 0.5)
    c2, w2 = _bounds_family(s2, 0.5 * abs(dominant_pole(s2)), grid, orders)
    r1, r2 = w1[25] / w1[5], w2[25] / w2[5]
    ok = c1 and c2 and r1 < 0.1 and r2 < 0.1
    return Result(5, "interval validity and shrinkage", ok, f"contained M/M/1 {c1}, M/D/1 {c2}; width ratio n=25/n=5 at u=2: {r1:.2e}, {r2:.2e} (tol 0.1)")


def quotient_fleet(a: float = 1.0) -> list[ServerSpec]:
    fleet = []
    for sid, lam, om in (("1", 1.0, 2.0), ("2", 0.5, 1.0)):
        fleet.append(
            ServerSpec(
                sid,
                QueueSpec(Exponential(om), lam),
                quotient_cost_fn(a),
                tail=lambda tau, a=a: quotient_tail(a, tau),
                modulus=lambda tau, delta, a=a: quotient_cost_modulus(a, tau)(delta),
            )
        )
    return fleet


def _reference_admission(server: ServerSpec, u: float, d: float, tau: float = 60.0) -> float:
    """Kernel quadrature with the true cost everywhere (no approximation)."""
    ker = _kernel(server.spec, float(u), float(d), float(tau))
    c = server.cost
    return ker.signed(c(ker.z_in), c(ker.z_out), float(c(np.array([0.0]))[0]))


def check_policy_map(grid_points: int = 20) -> Result:
    fleet = quotient_fleet()
    d = [1.0, 2.0]
    grid = np.linspace(0.0, 5.0, grid_points)
    resolved = wrong = flipped = 0
    for u1, u2 in itertools.product(grid, grid):
        u = [float(u1), float(u2)]
        rec = dispatch_decide(fleet, u, d)
        if rec.winner is None:
            continue
        resolved += 1
        ref = {s.id: _reference_admission(s, ui, di) for s, ui, di in zip(fleet, u, d)}
        if min(ref, key=ref.get) != rec.winner:
            wrong += 1
        # the same decision with doubled n and tau must not point elsewhere
        step = rec.trace[-1][2]
        ivs = {}
        for s, ui, di in zip(fleet, u, d):
            tau, n = step.get(s.id, (1.0, 1))
            ivs[s.id] = admission_interval(s, ui, di, 2.0 * tau, 2 * max(n, 1))
        alive = dominance(ivs)
        if len(alive) == 1 and alive[0] != rec.winner:
            flipped += 1
    total = grid_points**2
    frac = resolved / total
    ok = frac >= 0.95 and wrong == 0 and flipped == 0
    return Result(
        6,
        "policy map resolution",
        ok,
        f"resolved {resolved}/{total} = {frac:.1%} (need 95%), wrong winners {wrong}, flips under doubling {flipped}",
    )


def _models_at(rho: float):
    lam = 0.5
    return [
        ("M/M/1", QueueSpec(Exponential(lam / rho), lam)),
        ("M/D/1", QueueSpec(Deterministic(rho / lam), lam)),
        ("M/E2/1", QueueSpec(Erlang(2, 2 * lam / rho), lam)),
    ]


def check_busy_period(quick: bool = False) -> Result:
    reps = 4_000 if quick else 20_000
    u1, u2 = 2.0, 0.5
    worst = 0.0
    for rho in (0.3, 0.5, 0.8):
        for _, spec in _models_at(rho):
            T, N = sim_busy_period(SimConfig(spec, seed=7, replications=reps), u1, u2)
            eT = (u1 - u2) / (1 - spec.rho)
            eN = spec.lam * eT
            worst = max(worst, abs(T.mean - eT) / T.stderr, abs(N.mean - eN) / N.stderr)
    return Result(7, "busy-period identities", worst <= 3.0, f"max |z| over 9 queues {worst:.2f} (tol 3)")


def check_germ_fidelity(quick: bool = False) -> Result:
    jobs = 100_000 if quick else 400_000
    worst = 0.0
    for _, spec in _models_at(0.5):
        y = germ_at_zero(spec, 2).coeffs.real
        st = sim_waiting_stats(SimConfig(spec, seed=5), jobs=jobs, warmup=2_000)
        for est, ref in ((st.mean, y[1]), (st.second, 2.0 * y[2]), (st.zero_fraction, 1.0 - spec.rho)):
            worst = max(worst, abs(est.mean - ref) / est.stderr)
    return Result(8, "waiting-time germ fidelity", worst <= 3.0, f"max |z| over E[W], E[W^2], P(W=0) {worst:.2f} (tol 3)")


def check_filter_round_trip() -> Result:
    rng = np.random.default_rng(2024)
    spec = QueueSpec(Exponential(1.0), 0.5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 25))
        q = rng.uniform(0.1, 0.9)
        c = rng.normal(size=n) * q ** np.arange(n)
        back = inverse_filter_germ(spec, filter_germ(spec, Germ(c), n), n).coeffs.real
        worst = max(worst, float(np.max(np.abs(back - c)) / np.max(np.abs(c))))
    a = 0.5
    got = inverse_filter_germ(spec, SaturatingWGerm(spec, a), 12).coeffs.real
    want = np.array([(1.0 if k == 0 else 0.0) - (-a) ** k for k in range(12)])
    ex3 = float(np.max(np.abs(got - want)))
    ok = worst <= 1e-10 and ex3 <= 1e-10
    return Result(9, "filter round trip", ok, f"max rel error {worst:.1e} on 100 germs, saturating-cost inversion error {ex3:.1e}")


def check_toeplitz_identity() -> Result:
    worst = 0.0
    for spec in (QueueSpec(Exponential(1.0), 0.5), QueueSpec(Deterministic(1.0), 0.5), QueueSpec(Erlang(2, 2.0), 0.6)):
        for n in range(1, 21):
            Y = toeplitz_filter_matrix(spec, n)
            M = moment_matrix(spec, n)
            P = Y @ (np.eye(n) / spec.lam - M)
            worst = max(worst, float(np.max(np.sum(np.abs(P - np.eye(n)), axis=1))))
    return Result(10, "Toeplitz identity", worst <= 1e-10, f"max inf-norm residual {worst:.1e} for n <= 20")


def _compositions(n: int, m: int):
    """Ordered m-tuples of parts >= 2 summing to n."""
    if m == 0:
        if n == 0:
            yield ()
        return
    for p in range(2, n - 2 * (m - 1) + 1):
        for rest in _compositions(n - p, m - 1):
            yield (p,) + rest


def _brute_phi(m: int, n: int) -> int:
    count = 0
    for lab in itertools.product(range(m), repeat=n):
        if all(lab.count(k) >= 2 for k in range(m)):
            count += 1
    return count


def check_scenario_counts() -> Result:
    N = 40
    phi = scenario_counts(N // 2, N)
    ref_residual = scenario_refinement_residual(phi)
    # the normalized convolution is the construction; check it independently
    worst = ref_residual
    for m in range(1, N // 2):
        for n in range(2 * m + 2, N + 1):
            rhs = sum(phi[m, p] / math.factorial(n - p) for p in range(2 * m, n - 1))
            if phi[m + 1, n]:
                worst = max(worst, _rel(rhs, phi[m + 1, n]))
    brute_ok = True
    for m in range(1, 4):
        for n in range(2 * m, 11):
            if m ** n > 200_000:
                continue
            brute_ok &= _brute_phi(m, n) == round(phi[m, n] * math.factorial(n))
    for q in (1, 2, 3):
        th = erlang_scenario_counts(q, N // 2, N)
        for m in range(1, N // 2):
            for n in range(2 * m + 2, N + 1):
                # split off the first urn instead of the last one
                rhs = sum(th[1, n - p] * th[m, p] for p in range(2 * m, n - 1))
                if th[m + 1, n]:
                    worst = max(worst, _rel(rhs, th[m + 1, n]))
        for m in range(1, 5):
            for n in range(2 * m, 11):
                want = sum(math.prod(math.comb(p + q - 1, q - 1) for p in c) for c in _compositions(n, m))
                brute_ok &= want == round(th[m, n])
    ok = worst <= 1e-12 and brute_ok
    return Result(11, "scenario-count recursions", ok, f"max relative recursion residual {worst:.1e}, brute force match {brute_ok}")


def check_determinism() -> Result:
    import json
    import os
    import tempfile

    from .cli import run

    doc = {
        "queue": {"lambda": 0.5, "model": {"kind": "exponential", "omega": 1.0}},
        "cost": {"kind": "exp_decay", "a": 0.25},
        "u0": "0.5:2:4",
        "seed": 99,
        "reps": 10_000,
    }
    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "sim.json")
        with open(path, "w") as fh:
            json.dump(doc, fh)
        for threads in ("1", "1", "4"):
            buf = io.StringIO()
            code = run(["simulate", "--config", path, "--threads", threads], stdout=buf, stderr=io.StringIO())
            outs.append((code, buf.getvalue()))
    ok = all(c == 0 for c, _ in outs) and len({o for _, o in outs}) == 1
    return Result(12, "simulation determinism", ok, f"3 runs (threads 1,1,4) byte-identical: {len({o for _, o in outs}) == 1}")


CHECKS: list[tuple[int, Callable]] = [
    (1, check_closed_form_concordance),
    (2, check_divergence),
    (3, check_md1_step),
    (4, check_approximation_bounds),
    (5, check_interval_shrinkage),
    (6, check_policy_map),
    (7, check_busy_period),
    (8, check_germ_fidelity),
    (9, check_filter_round_trip),
    (10, check_toeplitz_identity),
    (11, check_scenario_counts),
    (12, check_determinism),
]

_QUICKABLE = {1, 3, 7, 8}


def run_check(number: int, quick: bool = False) -> Result:
    fn = dict(CHECKS)[number]
    t0 = time.perf_counter()
    res = fn(quick=quick) if number in _QUICKABLE else fn()
    res.seconds = time.perf_counter() - t0
    return res


def run_all(quick: bool = False) -> list[Result]:
    return [run_check(k, quick) for k, _ in CHECKS]
