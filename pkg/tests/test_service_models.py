import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import gamma

from mg1w.errors import DomainError, PoleEvaluation, StabilityViolation
from mg1w.service_models import (
    Deterministic,
    Erlang,
    Exponential,
    QueueSpec,
    model_from_dict,
    stability_check,
    utilization,
)

MODELS = [Deterministic(1.5), Exponential(2.0), Erlang(3, 4.0)]


def test_moments():
    assert Exponential(1.0).moment(3) == pytest.approx(6.0)
    assert Deterministic(2.0).moment(2) == pytest.approx(4.0)


def test_erlang_second_moment_by_quadrature():
    ref = quad(lambda t: t**2 * gamma.pdf(t, 2, scale=1.0), 0, np.inf)[0]
    assert Erlang(2, 1.0).moment(2) == pytest.approx(ref, rel=1e-10)
    assert ref == pytest.approx(6.0)


@pytest.mark.parametrize("model", MODELS)
def test_transform_normalized(model):
    assert model.lst(0.0) == pytest.approx(1.0)


def test_transform_values():
    assert Exponential(1.0).lst(1.0) == pytest.approx(0.5)
    assert Deterministic(1.0).lst(1j * math.pi) == pytest.approx(-1.0)


def test_transform_pole():
    with pytest.raises(PoleEvaluation):
        Exponential(1.0).lst(-1.0)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_shifted_moment_at_zero_is_plain_moment(model, k):
    assert model.shifted_moment_coeff(0.0, k) == pytest.approx(model.moment(k) / math.factorial(k))


def test_shifted_moment_examples():
    assert Deterministic(1.0).shifted_moment_coeff(1.0, 2) == pytest.approx(math.exp(-1) / 2)
    ref = quad(lambda t: t * math.exp(-0.25 * t) * math.exp(-t), 0, np.inf)[0]
    assert Exponential(1.0).shifted_moment_coeff(0.25, 1) == pytest.approx(ref, rel=1e-10)
    assert ref == pytest.approx(0.64)


def _log_density(model):
    return lambda t: gamma.logpdf(t, model.q, scale=1.0 / model.omega)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([Exponential(2.0), Erlang(3, 4.0), Erlang(2, 1.5)]), st.floats(-0.9, 3.0), st.integers(0, 5))
def test_shifted_moment_against_quadrature(model, a, k):
    a = a * model.omega if a < 0 else a
    lf = _log_density(model)
    integrand = lambda t: math.exp(k * math.log(t) - a * t + lf(t)) if t > 0 else 0.0
    ref = quad(integrand, 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0] / math.factorial(k)
    assert complex(model.shifted_moment_coeff(a, k)).real == pytest.approx(ref, rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0), st.integers(0, 6))
def test_deterministic_shifted_moment_formula(a, k):
    d = 1.3
    want = d**k * math.exp(-a * d) / math.factorial(k)
    assert complex(Deterministic(d).shifted_moment_coeff(a, k)).real == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("model", MODELS)
def test_transform_derivatives_give_moments(model):
    h = 1e-2
    xs = np.arange(-4, 5) * h
    vals = np.array([complex(model.lst(x)).real for x in xs])
    coef = np.polynomial.polynomial.polyfit(xs, vals, 8)
    for k in range(1, 4):
        # coefficient of s^k equals (-1)^k x_k
        assert coef[k] == pytest.approx((-1) ** k * model.moment(k) / math.factorial(k), rel=1e-6)


def test_utilization_and_stability():
    assert utilization(QueueSpec(Exponential(1.0), 0.5))[0] == pytest.approx(0.5)
    assert QueueSpec(Erlang(2, 4.0), 1.0).rho == pytest.approx(0.5)
    with pytest.raises(StabilityViolation) as exc:
        stability_check(QueueSpec(Deterministic(1.0), 1.0))
    assert exc.value.rho == pytest.approx(1.0)


def test_setup_law_restricted_to_deterministic():
    QueueSpec(Exponential(1.0), 0.5, Deterministic(2.0))
    with pytest.raises(DomainError):
        QueueSpec(Exponential(1.0), 0.5, Exponential(3.0))


@pytest.mark.parametrize("model", MODELS)
def test_dict_round_trip(model):
    assert model_from_dict(model.to_dict()) == model


@pytest.mark.parametrize("bad", [{"kind": "pareto"}, {"kind": "erlang", "q": 0, "omega": 1.0}, {"kind": "deterministic", "d": -1}])
def test_bad_model_dicts(bad):
    with pytest.raises(Exception):
        model_from_dict(bad)
