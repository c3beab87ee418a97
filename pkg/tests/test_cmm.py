import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tamlab.cmm import (
    RetrievalEstimate,
    build_cmm,
    cmm_scores,
    dim_for_rho,
    percentile_cdf_theory,
    percentile_pdf_theory,
    percentile_samples,
    retrieval_probability,
    scan_point,
    single_coordinate_sample,
    threshold_scan,
    top1_holds,
    wilson_interval,
)
from tamlab.ensemble import make_rng, sample_instance, score_matrix


def test_cmm_scores_match_direct_product():
    inst = sample_instance(7, 11, 3)
    assert np.allclose(cmm_scores(inst), score_matrix(build_cmm(inst), inst), atol=1e-12)


def test_top1_examples():
    assert top1_holds(np.eye(3))
    S = np.eye(3)
    S[1, 0] = 1.0  # tie fails
    assert not top1_holds(S)
    assert top1_holds(np.array([[5.0]]))
    with pytest.raises(ValueError):
        top1_holds(np.zeros((2, 3)))


@given(arrays(np.float64, (5, 5), elements=st.integers(-3, 3).map(float)))
def test_percentiles_brute_force(S):
    n = S.shape[0]
    expect = [sum(S[j, i] <= S[i, i] for j in range(n) if j != i) / (n - 1) for i in range(n)]
    assert np.allclose(percentile_samples(S), expect)
    full = all(S[i, i] > S[j, i] for i in range(n) for j in range(n) if j != i)
    assert top1_holds(S) == full


def test_percentile_law_is_a_cdf_with_matching_density():
    w = np.linspace(1e-4, 1 - 1e-4, 2001)
    for a in (0.3, 1.0, 4.0):
        F = percentile_cdf_theory(a, w)
        assert np.all(np.diff(F) >= 0)
        h = 1e-6
        fd = (percentile_cdf_theory(a, w[1:-1] + h) - percentile_cdf_theory(a, w[1:-1] - h)) / (2 * h)
        assert np.allclose(fd, percentile_pdf_theory(a, w[1:-1]), rtol=1e-5, atol=1e-7)
    assert percentile_cdf_theory(1.0, 0.0) == 0.0 and percentile_cdf_theory(1.0, 1.0) == 1.0
    assert np.array_equal(percentile_cdf_theory(2.0, [0.0, 1.0]), [0.0, 1.0])
    with pytest.raises(ValueError):
        percentile_cdf_theory(0.0, 0.5)
    with pytest.raises(ValueError):
        percentile_cdf_theory(1.0, 1.5)


def test_wilson_interval_properties():
    lo, hi = wilson_interval(10, 50)
    assert lo < 0.2 < hi
    assert wilson_interval(0, 20)[0] == 0.0 and wilson_interval(20, 20)[1] == 1.0
    # width shrinks like 1 / sqrt(trials)
    w1 = np.diff(wilson_interval(30, 100))[0]
    w4 = np.diff(wilson_interval(120, 400))[0]
    assert w1 / w4 == pytest.approx(2.0, rel=0.05)
    est = RetrievalEstimate(50, 10)
    assert est.p_hat == 0.2 and est.stderr == pytest.approx(math.sqrt(0.2 * 0.8 / 50))


def test_dim_for_rho():
    n = 1000
    d = dim_for_rho(8.0, n)
    assert abs(d * d / (n * math.log(n)) - 8.0) < 2 * d / (n * math.log(n)) + 1e-12
    with pytest.raises(ValueError):
        dim_for_rho(-1.0, n)


def test_retrieval_is_deterministic_and_scan_uses_point_streams():
    a = retrieval_probability(20, 30, 5, seed=9)
    b = retrieval_probability(20, 30, 5, seed=9)
    assert a == b
    scan = threshold_scan(50, [2.0, 12.0], trials=4, seed=5)
    assert scan[1] == scan_point(50, 1, 12.0, 4, 5)
    assert scan[1].estimate.p_hat >= scan[0].estimate.p_hat


def test_single_coordinate_law_matches_full_matrix():
    """Moments of (theta, xi) against the first column of the sampled CMM score matrix."""
    d, n, reps = 12, 40, 3000
    rng = make_rng(1)
    th, xi2, xmax = [], [], []
    for _ in range(reps):
        dr = single_coordinate_sample(d, n, rng)
        th.append(dr.theta)
        xi2.append(np.mean(dr.xi**2))
        xmax.append(dr.xi.max())
    th_ref, xi2_ref, xmax_ref = [], [], []
    for t in range(reps):
        S = cmm_scores(sample_instance(d, n, 10_000 + t))
        th_ref.append(S[0, 0])
        xi2_ref.append(np.mean(S[1:, 0] ** 2))
        xmax_ref.append(S[1:, 0].max())
    for x, y in ((th, th_ref), (xi2, xi2_ref), (xmax, xmax_ref)):
        x, y = np.asarray(x), np.asarray(y)
        se = math.sqrt(x.var() / reps + y.var() / reps)
        assert abs(x.mean() - y.mean()) <= 4 * se
    assert np.std(th) == pytest.approx(np.std(th_ref), rel=0.08)
