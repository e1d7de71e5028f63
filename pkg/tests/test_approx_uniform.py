import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import chebyshev as C

from mg1w.errors import ConfigError, DomainError
from mg1w.approx_uniform import (
    SampledCost,
    TailEnvelope,
    approximate,
    bernstein,
    bernstein_eval,
    compile_expression,
    cos_poly,
    cos_poly_closed,
    fourier_coeffs,
    interval_cost,
    korovkin_weights,
    measured_error,
    modulus,
    modulus_estimate,
    near_best,
    periodic_bounds,
    quotient_cost,
    quotient_cost_fn,
    quotient_cost_modulus,
    quotient_tail,
    theta_sum,
)
from mg1w.piecewise import w_piecewise
from mg1w.service_models import Erlang, Exponential, QueueSpec
from mg1w.wfunction_core import ExpPolyTerm, w_for_exp_poly_cost

MM1 = QueueSpec(Exponential(1.0), 0.5)


def smooth(tau=3.0):
    return SampledCost(lambda u: np.sin(u) + 0.3 * u, tau)


# --- Bernstein ----------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 4, 16, 40])
def test_bernstein_forward_differences_match_basis(n):
    c = smooth()
    b = bernstein(c, n)
    u = np.linspace(0, c.tau, 31)
    assert np.allclose(b(u), bernstein_eval(c, n, u), atol=1e-10)


def test_bernstein_reproduces_linear_functions():
    c = SampledCost(lambda u: 2.0 - 0.5 * u, 4.0)
    b = bernstein(c, 7)
    u = np.linspace(0, 4, 9)
    assert np.allclose(b(u), 2.0 - 0.5 * u)


def test_bernstein_error_within_declared_bound():
    c = quotient_cost(1.0, 5.0)
    for n in (4, 16, 64):
        b = bernstein(c, n)
        assert measured_error(c, b) <= b.eta


# --- Korovkin-damped Chebyshev sums -------------------------------------------


def test_korovkin_weights_shape():
    r = korovkin_weights(6)
    assert r[0] == 1.0
    assert r[1] == pytest.approx(math.cos(math.pi / 8))
    assert np.all(np.abs(r) <= 1.0 + 1e-15)
    assert np.all(np.diff(r) < 0)


@pytest.mark.parametrize("k", range(12))
def test_cos_polynomials(k):
    e = np.zeros(k + 1)
    e[k] = 1.0
    assert np.allclose(cos_poly(k), C.cheb2poly(e))
    assert np.allclose(cos_poly_closed(k), cos_poly(k))
    t = np.linspace(0, math.pi, 9)
    assert np.allclose(np.polynomial.polynomial.polyval(np.cos(t), cos_poly(k)), np.cos(k * t), atol=1e-12)


def test_fourier_coefficients_of_a_chebyshev_polynomial():
    # c(u) = T_3(x) with x = 2u/tau - 1, so alpha_3 = 1/2 and the others vanish
    tau = 2.0
    c = SampledCost(lambda u: C.chebval(2 * u / tau - 1, [0, 0, 0, 1.0]), tau)
    a = fourier_coeffs(c, 6)
    want = np.zeros(7)
    want[3] = 0.5
    assert np.allclose(a, want, atol=1e-12)


def test_near_best_monomial_and_cosine_sums_agree():
    c = smooth()
    nb = near_best(c, 12)
    t = np.linspace(0, math.pi, 17)
    u = c.tau * (1 + np.cos(t)) / 2
    assert np.allclose(nb(u), theta_sum(c, 12, t), atol=1e-10)
    assert np.allclose(nb.monomial_value(u), nb(u), atol=1e-8)


@pytest.mark.parametrize("n", [4, 16, 64])
def test_near_best_error_within_declared_bound(n):
    c = quotient_cost(1.0, 5.0)
    nb = near_best(c, n)
    assert measured_error(c, nb) <= nb.eta


def test_near_best_beats_bernstein_at_same_degree():
    c = quotient_cost(1.0, 5.0)
    assert near_best(c, 32).eta < bernstein(c, 32).eta


def test_unknown_method_rejected():
    with pytest.raises(DomainError):
        approximate(smooth(), 4, method="pade")


# --- modulus of continuity ----------------------------------------------------


def _brute_modulus(fn, tau, delta, steps=400):
    # grid step divides delta so the widest window is exactly delta
    h = delta / steps
    u = np.arange(0.0, tau + h / 2, h)
    v = fn(u)
    k = min(steps, len(u) - 1)
    return max(np.max(np.abs(v[j:] - v[:-j])) for j in range(1, k + 1))


@pytest.mark.parametrize("delta", [0.05, 0.3, 1.0, 4.0])
def test_quotient_modulus_exact(delta):
    a, tau = 1.0, 5.0
    w = quotient_cost_modulus(a, tau)(delta)
    assert w == pytest.approx(_brute_modulus(quotient_cost_fn(a), tau, delta), rel=1e-4)


@pytest.mark.parametrize("delta", [0.01, 0.2, 1.5])
def test_grid_modulus_is_conservative(delta):
    c = quotient_cost(1.0, 5.0)
    assert modulus_estimate(c, delta) >= modulus(c, delta)


def test_modulus_needs_positive_step():
    with pytest.raises(DomainError):
        modulus_estimate(smooth(), 0.0)


# --- interval costs -----------------------------------------------------------


def _spec_value(spec, u):
    return np.real(spec(u))


@pytest.mark.parametrize("method", ["near_best", "bernstein"])
def test_interval_cost_encloses_quotient(method):
    a, tau = 1.0, 4.0
    lo, hi, _ = interval_cost(quotient_cost(a, tau), tau, 16, quotient_tail(a, tau), method)
    u = np.linspace(0, 6 * tau, 600)
    c = quotient_cost_fn(a)(u)
    assert np.all(_spec_value(lo, u) <= c + 1e-12)
    assert np.all(c <= _spec_value(hi, u) + 1e-12)


def test_interval_w_is_ordered():
    a, tau = 1.0, 4.0
    spec = QueueSpec(Erlang(2, 4.0), 1.0)
    lo, hi, _ = interval_cost(quotient_cost(a, tau), tau, 12, quotient_tail(a, tau))
    u = np.linspace(0, 10, 21)
    wl = w_piecewise(spec, lo).w.evaluate(u).real
    wh = w_piecewise(spec, hi).w.evaluate(u).real
    assert np.all(wl <= wh + 1e-10)


def test_tail_envelope_rejects_crossing():
    env = TailEnvelope((ExpPolyTerm(1.0, 0),), (ExpPolyTerm(0.5, 0),))
    with pytest.raises(DomainError):
        env.check(1.0, 5.0)


def test_sampled_cost_rejects_nonfinite():
    with pytest.raises(DomainError):
        SampledCost(lambda u: np.where(u > 1.0, np.inf, u), 2.0)


# --- periodic costs -----------------------------------------------------------


def test_periodic_bounds_contain_exact_cosine_cost():
    T = 3.0
    k = 2 * math.pi / T
    fn = lambda u: 1.0 + np.cos(k * np.asarray(u))
    exact = w_for_exp_poly_cost(
        MM1, [ExpPolyTerm(1.0, 0), ExpPolyTerm(0.5, 0, 1j * k), ExpPolyTerm(0.5, 0, -1j * k)]
    )
    b = periodic_bounds(MM1, fn, T, 8)
    u = np.linspace(0, 9, 37)
    lo, hi = b(u)
    w = exact.w.evaluate(u).real
    assert np.all(lo <= w + 1e-10) and np.all(w <= hi + 1e-10)
    assert b.mean_cost.contains(exact.mean_cost.real)


def test_periodic_bounds_tighten_with_degree():
    T = 2.0
    fn = lambda u: np.abs(np.sin(math.pi * np.asarray(u) / T))
    w4 = periodic_bounds(MM1, fn, T, 4).width(5.0)
    w32 = periodic_bounds(MM1, fn, T, 32).width(5.0)
    assert w32 < w4


# --- cost expressions ---------------------------------------------------------


def test_expression_evaluates_vectorized():
    f = compile_expression("u**2/(a**2 + u**2)", {"a": 2.0})
    u = np.array([0.0, 1.0, 2.0])
    assert np.allclose(f(u), u**2 / (4 + u**2))


@pytest.mark.parametrize(
    "text",
    ["__import__('os').system('true')", "u.real", "open('x')", "(lambda: 1)()", "[u][0]", "exp(u, out=u)", "v + 1"],
)
def test_expression_rejects_unsafe_or_unknown(text):
    with pytest.raises(ConfigError):
        compile_expression(text)


def test_expression_syntax_error_is_config_error():
    with pytest.raises(ConfigError):
        compile_expression("u +* 2")


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(0, 10))
def test_expression_matches_python(p, q, u):
    f = compile_expression("p*exp(-q*u) + sqrt(u) - cos(pi*u)", {"p": p, "q": q})
    want = p * math.exp(-q * u) + math.sqrt(u) - math.cos(math.pi * u)
    assert float(f(u)) == pytest.approx(want, rel=1e-12, abs=1e-12)
