import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from tamlab.kernels import SKIP, elementwise_exp_neg, elementwise_log1p_unit


def test_exp_polynomial_accuracy():
    x = np.linspace(-SKIP - 2.0, 0.0, 200_001)
    rel = np.abs(elementwise_exp_neg(x) / np.exp(x) - 1.0)
    assert rel.max() <= 4e-15


def test_log1p_polynomial_accuracy():
    e = np.linspace(0.0, 1.0, 100_001)
    err = np.abs(elementwise_log1p_unit(e) - np.log1p(e))
    assert err.max() <= 4e-16 * 1.0 + 2e-16 * np.log1p(e).max()


@given(st.floats(-42.0, 0.0))
def test_exp_pointwise(x):
    v = elementwise_exp_neg(np.array([x]))[0]
    assert abs(v / np.exp(x) - 1.0) <= 4e-15
