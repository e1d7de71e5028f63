import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from mg1w.errors import AdmissibilityError, DomainError, StabilityViolation
from mg1w.service_models import Deterministic, Erlang, Exponential, QueueSpec
from mg1w.simulator import SimConfig, sim_discharge_cost, sim_discharge_difference
from mg1w.waiting_time import pk_lst, waiting_cdf
from mg1w.wfunction_core import (
    ExpPolyCost,
    ExpPolyTerm,
    PiecewiseExpPoly,
    admission_cost,
    canonical_terms,
    mean_cost_per_job,
    relative_value,
    w_for_exp_poly_cost,
    w_table1,
)

MM1 = QueueSpec(Exponential(1.0), 0.5)
MD1 = QueueSpec(Deterministic(1.0), 0.5)
ME2 = QueueSpec(Erlang(2, 4.0), 1.0)
U = np.linspace(0, 6, 13)


def c_exp(a):
    return ExpPolyCost([ExpPolyTerm(1.0, 0, a)])


# closed forms on M/M/1 with lam = 0.5, omega = 1, so lam/(1-rho) = 1 and E[W] = 1


def test_unit_cost_is_linear():
    r = w_table1(MM1, 0)
    assert np.allclose(r.w.evaluate(U).real, U)
    assert r.mean_cost == pytest.approx(1.0)


def test_exponential_cost_derivative():
    r = w_table1(MM1, 0, 0.25)
    assert np.allclose(r.wprime.evaluate(U).real, 5 / 6 * np.exp(-0.25 * U), rtol=1e-13)


def test_identity_cost():
    r = w_table1(MM1, 1)
    assert np.allclose(r.wprime.evaluate(U).real, 1.0 + U)
    assert np.allclose(r.w.evaluate(U).real, U + U**2 / 2)
    assert r.mean_cost == pytest.approx(1.0)


def test_saturating_cost():
    a = 0.25
    cost = ExpPolyCost([ExpPolyTerm(1.0, 0), ExpPolyTerm(-1.0, 0, a)])
    r = w_for_exp_poly_cost(MM1, cost)
    want = U - 5 / 6 * (1 - np.exp(-a * U)) / a
    assert np.allclose(r.w.evaluate(U).real, want, rtol=1e-13, atol=1e-14)
    assert r.mean_cost == pytest.approx(1 / 6)


@pytest.mark.parametrize("spec", [MM1, MD1, ME2])
def test_w_vanishes_at_origin(spec):
    r = w_for_exp_poly_cost(spec, [ExpPolyTerm(2.0, 2, 0.3), ExpPolyTerm(1.0, 0)])
    assert abs(r.w.evaluate(0.0)) < 1e-15


def _wprime_by_quadrature(spec, cost, u):
    # lam/(1-rho) E[c(u+W)] with the atom at 0 and the density from the CDF
    lam, rho = spec.lam, spec.rho
    f = lambda x: float(np.real(cost(u + x)))
    dens = lambda x: (waiting_cdf(spec, x + 1e-6) - waiting_cdf(spec, x - 1e-6)) / 2e-6
    cont = quad(lambda x: f(x) * dens(x), 1e-6, 60, limit=400)[0]
    return lam / (1 - rho) * ((1 - rho) * f(0.0) + cont)


@pytest.mark.parametrize("spec", [MM1, ME2])
@pytest.mark.parametrize("n,a", [(0, 0.5), (1, 0.2), (3, 1.0)])
def test_wprime_against_quadrature(spec, n, a):
    r = w_table1(spec, n, a)
    cost = ExpPolyCost([ExpPolyTerm(1.0, n, a)])
    for u in (0.0, 0.7, 2.5):
        assert r.wprime.evaluate(u).real == pytest.approx(_wprime_by_quadrature(spec, cost, u), rel=1e-5, abs=1e-8)


def test_md1_exponential_against_transform():
    a = 0.4
    r = w_table1(MD1, 0, a)
    lam, rho = 0.5, 0.5
    for u in (0.0, 1.0, 3.0):
        want = lam / (1 - rho) * math.exp(-a * u) * pk_lst(MD1, a)
        assert r.wprime.evaluate(u).real == pytest.approx(want.real, rel=1e-12)


def test_negative_rate_needs_admissibility():
    # M/M/1 here has p_W = -0.5
    w_table1(MM1, 0, -0.4)
    with pytest.raises(AdmissibilityError):
        w_table1(MM1, 0, -0.6)


def test_unstable_queue_rejected():
    with pytest.raises(StabilityViolation):
        w_table1(QueueSpec(Exponential(1.0), 1.0), 0)


# the closed form of int e^{-ax} is ill-conditioned for 0 < |a| << 1, so keep rates apart from 0
rates = st.one_of(st.just(0.0), st.floats(0.05, 2.0))
coefs = st.floats(-3.0, 3.0)


@settings(max_examples=30, deadline=None)
@given(coefs, coefs, rates, rates, st.integers(0, 3), st.integers(0, 3))
def test_linearity(k1, k2, a1, a2, m1, m2):
    both = w_for_exp_poly_cost(MM1, [ExpPolyTerm(k1, m1, a1), ExpPolyTerm(k2, m2, a2)])
    one = w_table1(MM1, m1, a1)
    two = w_table1(MM1, m2, a2)
    u = np.linspace(0, 4, 9)
    lhs = both.w.evaluate(u)
    rhs = k1 * one.w.evaluate(u) + k2 * two.w.evaluate(u)
    # the antiderivative stores constants up to |k| m!/a^(m+1) that cancel at small u
    big = max(abs(k) * math.factorial(m) / (a if a else 1.0) ** (m + 1) for k, m, a in ((k1, m1, a1), (k2, m2, a2)))
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-14 * (1.0 + big))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.01, 1.0))
def test_comparison(a, bump):
    # c2 - c1 = bump * e^{-a u} >= 0, so w2 - w1 is nondecreasing and nonnegative
    c1 = [ExpPolyTerm(1.0, 1)]
    c2 = c1 + [ExpPolyTerm(bump, 0, a)]
    d = w_for_exp_poly_cost(ME2, c2).w.evaluate(U).real - w_for_exp_poly_cost(ME2, c1).w.evaluate(U).real
    assert np.all(d >= -1e-12)
    assert np.all(np.diff(d) >= -1e-12)


def test_mean_cost_from_waiting_moments():
    # E[W^2] by the PK formula for Erlang(2, 4) at lam = 1
    m = ME2.model
    ew = ME2.lam * m.moment(2) / (2 * (1 - ME2.rho))
    ew2 = 2 * ew**2 + ME2.lam * m.moment(3) / (3 * (1 - ME2.rho))
    assert mean_cost_per_job(ME2, ExpPolyCost([ExpPolyTerm(1.0, 2)])) == pytest.approx(ew2, rel=1e-12)


def test_jump_at_zero_shifts_mean_cost():
    base = mean_cost_per_job(MM1, ExpPolyCost([ExpPolyTerm(1.0, 0)]))
    free_at_zero = mean_cost_per_job(MM1, ExpPolyCost([ExpPolyTerm(1.0, 0)], c0=0.0))
    # P(W = 0) = 1 - rho = 0.5
    assert base - free_at_zero == pytest.approx(0.5)


def test_relative_value_and_admission():
    r = w_table1(MM1, 1)
    assert relative_value(MM1, r, 0.0) == pytest.approx(0.0)
    assert np.allclose(admission_cost(MM1, r, U, 0.0), 0.0)
    u, d = 1.0, 0.5
    want = r.w.evaluate(u + d) - r.w.evaluate(u) - d * r.mean_cost
    assert admission_cost(MM1, r, u, d) == pytest.approx(want)


def test_admission_cost_matches_simulation():
    cost = ExpPolyCost([ExpPolyTerm(1.0, 1)])
    r = w_for_exp_poly_cost(MD1, cost)
    cfg = SimConfig(MD1, cost=lambda u: np.asarray(u, dtype=float), seed=7, replications=40_000)
    est = sim_discharge_difference(cfg, 1.0, 1.0)
    exact = (r.w.evaluate(2.0) - r.w.evaluate(1.0)).real
    assert est.contains(exact, k=4.0)


def test_w_matches_simulated_discharge_cost():
    cost = ExpPolyCost([ExpPolyTerm(1.0, 0), ExpPolyTerm(-1.0, 0, 0.5)])
    r = w_for_exp_poly_cost(ME2, cost)
    cfg = SimConfig(ME2, cost=lambda u: 1 - np.exp(-0.5 * np.asarray(u)), seed=3, replications=40_000)
    est = sim_discharge_cost(cfg, 1.5)
    assert est.contains(r.w.evaluate(1.5).real, k=4.0)


# --- the piecewise representation --------------------------------------------


def test_canonical_terms_merge_and_drop():
    t = canonical_terms([ExpPolyTerm(1.0, 2, 0.5), ExpPolyTerm(2.0, 2, 0.5), ExpPolyTerm(0.0, 1)])
    assert len(t) == 1 and t[0].kappa == 3.0


def test_negative_power_rejected():
    with pytest.raises(DomainError):
        ExpPolyTerm(1.0, -1)


def test_antiderivative_against_quadrature():
    f = PiecewiseExpPoly.from_absolute(
        [1.0, 2.5], [[ExpPolyTerm(1.0, 2, 0.3)], [ExpPolyTerm(-1.0, 0, 1.0)], [ExpPolyTerm(0.5, 1)]]
    )
    F = f.antiderivative()
    for u in (0.4, 1.7, 3.9):
        ref = quad(lambda x: f.evaluate(x).real, 0.0, u, points=[1.0, 2.5])[0]
        assert F.evaluate(u).real == pytest.approx(ref, rel=1e-12)
    assert f.integrate(0.4, 3.9) == pytest.approx(F.evaluate(3.9) - F.evaluate(0.4))


def test_derivative_inverts_antiderivative():
    f = PiecewiseExpPoly.single([ExpPolyTerm(1.5, 3, 0.2), ExpPolyTerm(-2.0, 1)], const=0.7)
    g = f.antiderivative().derivative()
    assert np.allclose(g.evaluate(U), f.evaluate(U))


def test_jumps_reported_at_breaks():
    f = PiecewiseExpPoly.from_absolute([1.0], [[ExpPolyTerm(1.0, 0)], [ExpPolyTerm(3.0, 0)]])
    (b, j), = f.jumps()
    assert b == 1.0 and j == pytest.approx(2.0)


def test_dict_round_trip():
    f = PiecewiseExpPoly.from_absolute(
        [2.0], [[ExpPolyTerm(1.0 + 2j, 1, 0.5 - 0.25j)], [ExpPolyTerm(-0.5, 0, 0.1)]]
    )
    assert PiecewiseExpPoly.from_dict(f.to_dict()) == f
