import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamlab.special import (
    gauss_hermite_expectation,
    gaussian_rule,
    graded_breakpoints,
    graded_rule,
    logistic_loss,
    normal_cdf,
    normal_pdf,
    normal_quantile,
    sigmoid,
    smooth_plus,
    smooth_plus_d2,
    softplus,
)


def erf_cdf(x):
    """Independent oracle built on math.erf / math.erfc."""
    if x < 0:
        return 0.5 * math.erfc(-x / math.sqrt(2))
    return 1.0 - 0.5 * math.erfc(x / math.sqrt(2))


def test_symmetry_values():
    assert normal_cdf(0.0) == 0.5
    assert normal_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-16)


@pytest.mark.parametrize("x", [-8.0, -3.3, -1.0, 0.2, 1.036433, 2.5, 7.0])
def test_cdf_matches_erf_oracle(x):
    assert abs(normal_cdf(x) - erf_cdf(x)) <= 1e-14


def test_cdf_reference_value():
    assert normal_cdf(1.036433) == pytest.approx(0.85, abs=1e-6)


@given(st.floats(-6.0, 0.0))
def test_quantile_roundtrip_lower_tail(x):
    assert abs(normal_quantile(normal_cdf(x)) - x) <= 1e-10


@given(st.floats(0.0, 6.0))
def test_quantile_roundtrip_upper_tail(x):
    # Phi(x) near 1 is stored with absolute spacing ~1.1e-16, which moves the
    # quantile by up to eps / phi(x) (about 2e-8 at x = 6); below that the
    # roundtrip is exact to 1e-10, and the mirrored form is always exact.
    bound = 1e-10 + 2.3e-16 / normal_pdf(x)
    assert abs(normal_quantile(normal_cdf(x)) - x) <= bound
    assert abs(-normal_quantile(normal_cdf(-x)) - x) <= 1e-10


def test_quantile_accuracy_against_erf():
    p = np.array([1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1 - 1e-9])
    x = normal_quantile(p)
    back = np.array([erf_cdf(v) for v in x])
    # relative accuracy on the smaller tail
    tail = np.minimum(p, 1 - p)
    assert np.all(np.abs(back - p) <= 1e-12 * np.maximum(tail, 1e-3))


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(ValueError):
        normal_quantile(p)


def test_gauss_hermite_moments():
    assert gauss_hermite_expectation(np.ones_like) == pytest.approx(1.0, abs=1e-14)
    assert gauss_hermite_expectation(lambda z: z**2) == pytest.approx(1.0, abs=1e-12)
    assert gauss_hermite_expectation(sigmoid) == pytest.approx(0.5, abs=1e-10)
    with pytest.raises(ValueError):
        gauss_hermite_expectation(np.ones_like, nodes=1)


def test_graded_rule_handles_sharp_sigmoid():
    # sigma(beta (Z - t)) = P(L <= beta (Z - t)) for a standard logistic L, so
    # the expectation is E_L Phi(-t + L / beta): an adaptive integral oracle.
    from scipy import integrate

    beta, t = 60.0, 0.7
    rule = gaussian_rule([(t, 1.0 / beta)])
    val = rule.integrate(sigmoid(beta * (rule.x - t)))

    def dens(u):
        s = sigmoid(u)
        return s * (1 - s) * normal_cdf(-(t - u / beta))

    ref, _ = integrate.quad(dens, -60, 60, epsabs=1e-14, epsrel=1e-13, limit=400)
    assert val == pytest.approx(ref, abs=1e-12)


def test_gaussian_rule_absolute_moment():
    rule = gaussian_rule()
    assert rule.integrate(np.abs(rule.x)) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-13)
    assert rule.integrate(np.ones_like(rule.x)) == pytest.approx(1.0, abs=1e-14)


def test_graded_breakpoints_structure():
    b = graded_breakpoints(-3.0, 5.0, [(1.0, 0.01), (10.0, 1.0), (0.0, -1.0)])
    assert b[0] == -3.0 and b[-1] == 5.0
    assert np.all(np.diff(b) > 0)
    assert 1.0 in b
    near = np.abs(b - 1.0)
    assert np.sort(near)[1] <= 0.01


def test_graded_rule_polynomial_exactness():
    rule = graded_rule(-1.0, 2.0, [(0.3, 0.1)], m=4)
    assert rule.integrate(rule.x**7) == pytest.approx((2.0**8 - 1.0) / 8, rel=1e-13)


@given(st.floats(-800, 800))
def test_softplus_stable_and_consistent(t):
    v = softplus(t)
    assert math.isfinite(v) and v >= max(t, 0.0)
    assert v - max(t, 0.0) <= math.log(2) + 1e-15
    assert logistic_loss(-t) == pytest.approx(v, rel=1e-15, abs=1e-300)


def test_sigmoid_symmetry_and_smooth_plus():
    t = np.linspace(-40, 40, 201)
    assert np.allclose(sigmoid(t) + sigmoid(-t), 1.0, atol=1e-15)
    beta = 30.0
    gap = smooth_plus(t, beta) - np.maximum(t, 0.0)
    assert np.all(gap >= -1e-13) and np.all(gap <= math.log(2) / beta + 1e-15)
    h = 1e-5
    fd = (smooth_plus(t + h, beta) - 2 * smooth_plus(t, beta) + smooth_plus(t - h, beta)) / h**2
    assert np.allclose(fd, smooth_plus_d2(t, beta), atol=2e-4)
