"""Special-function oracles.

The digamma/trigamma implementations are checked against slowly converging
but independently derived series representations, frozen closed-form
constants, and their recurrence / monotonicity properties.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oypolymer import specfun
from oypolymer.specfun import (
    EULER_GAMMA,
    CharacteristicPoint,
    digamma,
    free_energy_density,
    gamma_cdf,
    inv_trigamma,
    trigamma,
)


# --- independent series oracles -------------------------------------------

def digamma_series(x: float, terms: int = 400000) -> float:
    # psi0(x) = -gamma + sum_k [1/(k+1) - 1/(k+x)]
    k = np.arange(terms, dtype=float)
    partial = float(np.sum(1.0 / (k + 1.0) - 1.0 / (k + x)))
    # tail telescopes to psi(K+x) - psi(K+1); psi(y) ~ ln y - 1/(2y) there
    a, b = terms + x, terms + 1.0
    tail = math.log(a / b) - 0.5 / a + 0.5 / b
    return -EULER_GAMMA + partial + tail


def trigamma_series(x: float, terms: int = 200000) -> float:
    # psi1(x) = sum_k 1/(x+k)^2, Euler-Maclaurin tail after K terms
    k = np.arange(terms, dtype=float)
    partial = float(np.sum(1.0 / (x + k) ** 2))
    y = x + terms
    tail = 1.0 / y + 1.0 / (2.0 * y ** 2) + 1.0 / (6.0 * y ** 3)
    return partial + tail


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(b))


@pytest.mark.parametrize("x", [0.001, 0.01, 0.1, 0.5, 1.0, 1.5, 2.5, 7.0,
                               12.3, 95.0, 3000.0])
def test_digamma_series_oracle(x):
    assert _close(digamma(x), digamma_series(x), 1e-10)


@pytest.mark.parametrize("x", [0.001, 0.01, 0.1, 0.5, 1.0, 1.5, 2.5, 7.0,
                               12.3, 95.0, 3000.0])
def test_trigamma_series_oracle(x):
    assert _close(trigamma(x), trigamma_series(x), 1e-10)


def test_frozen_constants():
    assert abs(digamma(1.0) + EULER_GAMMA) < 1e-14
    assert abs(digamma(0.5) + EULER_GAMMA + 2.0 * math.log(2.0)) < 1e-13
    assert abs(trigamma(1.0) - math.pi ** 2 / 6.0) < 1e-14
    assert abs(trigamma(0.5) - math.pi ** 2 / 2.0) < 1e-13
    # psi0(2) = 1 - gamma
    assert abs(digamma(2.0) - (1.0 - EULER_GAMMA)) < 1e-14


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e5))
def test_digamma_recurrence(x):
    # tolerance scales with the operands: the recurrence subtracts values
    # of size 1/x, so cancellation below that scale is unavoidable
    scale = max(1.0, abs(digamma(x)), 1.0 / x)
    assert abs(digamma(x + 1.0) - (digamma(x) + 1.0 / x)) <= 1e-12 * scale


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e5))
def test_trigamma_recurrence(x):
    scale = max(1.0, trigamma(x))
    assert abs(trigamma(x + 1.0) - (trigamma(x) - 1.0 / x ** 2)) <= 1e-12 * scale


def test_trigamma_decreasing():
    xs = np.logspace(-3, 5, 200)
    vals = [trigamma(x) for x in xs]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_domain_errors():
    for bad in (0.0, -1.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            digamma(bad)
        with pytest.raises(ValueError):
            trigamma(bad)
        with pytest.raises(ValueError):
            inv_trigamma(bad)


# --- inverse trigamma ------------------------------------------------------

@pytest.mark.parametrize("theta", [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 500.0])
def test_inv_trigamma_round_trip(theta):
    assert abs(inv_trigamma(trigamma(theta)) - theta) <= 1e-9 * max(1.0, theta)


def test_inv_trigamma_tau_round_trip():
    for tau in (1e-4, 0.05, 1.0, 17.0, 1e4):
        assert _close(trigamma(inv_trigamma(tau)), tau, 1e-9)


# --- free energy -----------------------------------------------------------

def free_energy_by_grid(beta: float) -> float:
    """Dense-grid minimization of t beta^2 - psi0(t), independent of the
    Newton-based characteristic solve."""
    theta0 = inv_trigamma(beta ** 2)
    ts = np.linspace(max(theta0 / 8.0, 1e-4), theta0 * 8.0, 400001)
    vals = ts * beta ** 2 - np.array([digamma(t) for t in ts])
    return float(vals.min()) - 2.0 * math.log(beta)


@pytest.mark.parametrize("beta", [0.25, 0.5, 1.0, 2.0, 4.0])
def test_free_energy_two_forms(beta):
    # infimum form (dense grid) vs characteristic-theta form
    theta = inv_trigamma(beta ** 2)
    closed = theta * beta ** 2 - digamma(theta) - 2.0 * math.log(beta)
    assert abs(free_energy_density(beta) - closed) < 1e-10
    assert abs(free_energy_density(beta) - free_energy_by_grid(beta)) < 1e-7


def test_free_energy_frozen_value():
    assert abs(free_energy_density(1.0) - 1.4610543264294544) < 1e-12


def test_characteristic_point_consistency():
    p = CharacteristicPoint.from_theta(1.0)
    q = CharacteristicPoint.from_tau(p.tau)
    r = CharacteristicPoint.from_beta(p.beta)
    for other in (q, r):
        assert abs(other.theta - 1.0) < 1e-9
        assert abs(other.tau - p.tau) < 1e-9


def test_characteristic_time():
    assert _close(specfun.characteristic_time(32, 1.0), 32 * trigamma(1.0), 1e-14)


# --- regularized incomplete gamma -----------------------------------------

def test_gamma_cdf_against_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    xs = np.linspace(0.01, 20.0, 200)
    for shape in (0.3, 1.0, 2.5, 9.0):
        ours = np.array([gamma_cdf(x, shape) for x in xs])
        ref = scipy_stats.gamma.cdf(xs, shape)
        assert np.max(np.abs(ours - ref)) < 1e-12


def test_gamma_cdf_edges():
    assert gamma_cdf(0.0, 1.0) == 0.0
    assert abs(gamma_cdf(1.0, 1.0) - (1.0 - math.exp(-1.0))) < 1e-14
    assert gamma_cdf(1e4, 2.0) == pytest.approx(1.0, abs=1e-12)
