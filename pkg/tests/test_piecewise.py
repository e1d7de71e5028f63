import math

import numpy as np
import pytest
from scipy.integrate import quad

import late_cost_oracle as oracle
from mg1w.errors import DomainError, UnsupportedModel
from mg1w.piecewise import (
    PiecewiseCostSpec,
    step_md1_value,
    step_md1_wprime_value,
    w_piecewise,
    w_step_md1,
)
from mg1w.service_models import Deterministic, Erlang, Exponential, QueueSpec
from mg1w.simulator import SimConfig, sim_discharge_cost
from mg1w.waiting_time import waiting_cdf
from mg1w.wfunction_core import ExpPolyTerm, w_for_exp_poly_cost


def mm1(lam=0.5, om=1.0):
    return QueueSpec(Exponential(om), lam)


def tail_cost(n, a, tau):
    return PiecewiseCostSpec(tau, (), (ExpPolyTerm(1.0, n, a),))


# --- late-starting exponential polynomial under M/M/1 ---------------------------


@pytest.mark.parametrize(
    "n,a,tau,lam",
    [(0, 0.5, 1.0, 0.5), (1, 0.3, 2.0, 0.5), (2, 0.5, 1.5, 0.5), (3, 1.2, 0.7, 0.3), (2, 0.0, 1.0, 0.6), (4, -0.2, 2.5, 0.4)],
)
def test_late_cost_matches_residue_oracle(n, a, tau, lam):
    spec = mm1(lam)
    r = w_piecewise(spec, tail_cost(n, a, tau))
    for u in np.linspace(0, 3 * tau + 1, 17):
        args = (u, n, a, tau, lam, 1.0)
        assert r.wprime.evaluate(u).real == pytest.approx(oracle.wprime(*args), rel=1e-11, abs=1e-13)
        assert r.w.evaluate(u).real == pytest.approx(oracle.w(*args), rel=1e-11, abs=1e-13)


def test_printed_form_agrees_for_low_degree():
    for n in (0, 1):
        for u in (0.3, 1.0, 2.4, 5.0):
            args = (u, n, 0.5, 1.5, 0.5, 1.0)
            assert oracle.wprime_printed(*args) == pytest.approx(oracle.wprime(*args), rel=1e-12)


def test_printed_form_drops_binomials_beyond_linear():
    args = (1.9, 2, 0.5, 1.5, 0.5, 1.0)
    assert oracle.wprime(*args) == pytest.approx(1.60788, abs=1e-5)
    assert oracle.wprime_printed(*args) == pytest.approx(1.43384, abs=1e-5)


def _wprime_by_quadrature(spec, cost, u):
    lam, rho = spec.lam, spec.rho
    f = lambda x: float(np.real(cost(u + x)))
    dens = lambda x: (waiting_cdf(spec, x + 1e-6) - waiting_cdf(spec, x - 1e-6)) / 2e-6
    pts = [cost.tau - u] if cost.tau > u else None
    cont = quad(lambda x: f(x) * dens(x), 1e-6, 80, points=pts, limit=400)[0]
    return lam / (1 - rho) * ((1 - rho) * f(0.0) + cont)


@pytest.mark.parametrize("spec", [mm1(), QueueSpec(Erlang(2, 4.0), 1.0), QueueSpec(Erlang(3, 2.0), 0.4)])
def test_polynomial_interior_against_quadrature(spec):
    # quadratic ramp up to tau, then a decaying tail
    cost = PiecewiseCostSpec.from_polynomial([0.2, 0.5, 0.25], 2.0, tail=(3.0, 1, 0.4))
    r = w_piecewise(spec, cost)
    for u in (0.0, 0.6, 1.5, 2.0, 3.3):
        assert r.wprime.evaluate(u).real == pytest.approx(_wprime_by_quadrature(spec, cost, u), rel=2e-6)


def test_w_is_continuous_and_wprime_jumps_by_lam_times_cost_jump():
    spec = QueueSpec(Erlang(2, 4.0), 1.0)
    cost = PiecewiseCostSpec.from_polynomial([1.0], 1.5, tail=(2.0, 0, 0.0))
    r = w_piecewise(spec, cost)
    tau = 1.5
    assert r.w.max_jump() < 1e-12
    jump = r.wprime.evaluate(tau) - r.wprime.left_limit(tau)
    assert jump.real == pytest.approx(spec.lam * (2.0 - 1.0), rel=1e-10)


def test_no_tail_reduces_to_full_line_cost_when_tail_matches():
    spec = QueueSpec(Erlang(2, 3.0), 0.8)
    t = ExpPolyTerm(1.0, 2, 0.3)
    cost = PiecewiseCostSpec(1.2, (t,), (t,))
    a = w_piecewise(spec, cost).w.evaluate(np.linspace(0, 5, 11))
    b = w_for_exp_poly_cost(spec, [t]).w.evaluate(np.linspace(0, 5, 11))
    assert np.allclose(a, b, rtol=1e-11, atol=1e-13)


# --- step cost under deterministic service ------------------------------------


MD1 = QueueSpec(Deterministic(1.0), 0.5)


@pytest.mark.parametrize("tau", [0.5, 2.0, 3.7])
def test_step_closed_form_vs_residue_route(tau):
    pw = w_piecewise(MD1, PiecewiseCostSpec.from_polynomial([], tau, tail=(1.0, 0, 0.0)))
    cell = w_step_md1(MD1, tau)
    for u in np.linspace(0, 2 * tau + 1, 20):
        want = step_md1_value(MD1, tau, u)
        assert pw.w.evaluate(u).real == pytest.approx(want, rel=1e-9, abs=1e-12)
        assert cell.w.evaluate(u).real == pytest.approx(want, rel=1e-11, abs=1e-13)
        assert cell.wprime.evaluate(u).real == pytest.approx(step_md1_wprime_value(MD1, tau, u), rel=1e-11, abs=1e-13)


def test_step_mean_cost_is_tail_probability():
    tau = 2.0
    r = w_step_md1(MD1, tau)
    assert r.mean_cost.real == pytest.approx(1 - waiting_cdf(MD1, tau - 1e-12), rel=1e-8)


def test_step_against_simulation():
    tau = 2.0
    cfg = SimConfig(MD1, cost=lambda u: (np.asarray(u) >= tau).astype(float), seed=11, replications=40_000)
    est = sim_discharge_cost(cfg, 1.0)
    assert est.contains(step_md1_value(MD1, tau, 1.0), k=4.0)


def test_step_closed_form_needs_deterministic_service():
    with pytest.raises(UnsupportedModel):
        step_md1_value(mm1(), 1.0, 0.5)


def test_breakpoint_must_be_positive():
    with pytest.raises(DomainError):
        PiecewiseCostSpec(0.0)
