import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tamlab.ensemble import make_rng, sample_instance
from tamlab.objective import (
    CeProblem,
    TamConfig,
    TamProblem,
    ce_margins,
    ce_objective_and_gradient,
    evaluate,
    exact_tam_margins,
    fit_loss,
    gradient,
    hessian_apply,
    psi_at_origin,
    tail_count,
    tam_exact,
    tam_exact_variational,
    tam_smoothed,
)
from tamlab.special import logistic_loss, sigmoid

finite = st.floats(-50, 50, allow_nan=False)


# --- scalar functionals ------------------------------------------------------


@pytest.mark.parametrize("r,expect", [(1 / 3, 3.0), (1.0, 2.0), (2 / 3, 2.5)])
def test_tam_exact_examples(r, expect):
    assert tam_exact([3.0, 1.0, 2.0], r) == pytest.approx(expect)


def test_tam_variational_examples():
    val, mu = tam_exact_variational([3.0, 1.0, 2.0], 2 / 3)
    assert (val, mu) == (pytest.approx(2.5), 2.0)
    assert tam_exact_variational([4.0] * 5, 0.4) == (4.0, 4.0)
    with pytest.raises(ValueError):
        tam_exact([], 0.5)


@given(arrays(np.float64, 7, elements=finite), st.floats(0.01, 1.0))
def test_variational_form_matches_sort(x, r):
    val, mu = tam_exact_variational(x, r)
    assert val == pytest.approx(tam_exact(x, r), abs=1e-12)
    # brute force over all candidate thresholds
    k = tail_count(r, x.size)
    brute = min(t + np.maximum(x - t, 0).sum() / k for t in x)
    assert val == pytest.approx(brute, abs=1e-12)
    # conservative certificate: TAM dominates the k-th largest entry
    assert val >= np.sort(x)[::-1][k - 1] - 1e-12


@given(st.floats(0.0, 1.0), st.integers(1, 500))
def test_tail_count_range(r, m):
    if r == 0.0:
        r = 1e-3
    k = tail_count(r, m)
    assert 1 <= k <= m
    assert k >= r * m - 1e-9 and k <= max(1.0, r * m + 1)


def test_tail_count_exact_products():
    # 0.15 * 20 = 3.0000000000000004 in floating point
    assert tail_count(0.15, 20) == 3
    assert tail_count(0.3, 10) == 3


@given(arrays(np.float64, 9, elements=st.floats(-5, 5)), st.floats(0.1, 0.8), st.floats(1.0, 100.0))
def test_smoothed_tam_bounds_and_stationarity(x, r, beta):
    val, mu = tam_smoothed(x, r, beta)
    k = tail_count(r, x.size)
    exact = tam_exact(x, r)
    assert exact - 1e-10 <= val <= exact + (x.size / k) * math.log(2) / beta + 1e-10
    assert abs(sigmoid(beta * (x - mu)).sum() / k - 1.0) <= 1e-10
    shifted, _ = tam_smoothed(x + 3.7, r, beta)
    assert shifted == pytest.approx(val + 3.7, abs=1e-9)


def test_smoothed_tam_monotone_in_beta_and_converges(rng):
    x = rng.standard_normal(40)
    vals = [tam_smoothed(x, 0.2, b)[0] for b in (1, 3, 10, 30, 100, 1000)]
    assert np.all(np.diff(vals) <= 1e-12)
    k = tail_count(0.2, 40)
    assert vals[-1] - tam_exact(x, 0.2) <= 5 * math.log(2) / 1000 * 40 / k


def test_smoothed_tam_constant_vector_root():
    x = np.full(10, 1.5)
    val, mu = tam_smoothed(x, 0.3, 20.0)
    k = tail_count(0.3, 10)
    assert sigmoid(20.0 * (1.5 - mu)) == pytest.approx(k / 10, abs=1e-12)
    with pytest.raises(ValueError):
        tam_smoothed(x, 1.0, 20.0)


# --- joint objective -----------------------------------------------------------


def _point(d, n, seed, scale=0.5):
    rng = make_rng(seed)
    inst = sample_instance(d, n, seed)
    return inst, scale * rng.standard_normal((d, d)), 0.3 * rng.standard_normal(n)


def test_straight_line_oracle():
    """Psi from explicit loops over every (i, j) pair."""
    inst, W, mu = _point(3, 4, 1)
    cfg = TamConfig(0.5, 7.0, 0.3)
    n, d = 4, 3
    k = math.ceil(0.5 * (n - 1))
    total = 0.0
    for i in range(n):
        sii = sum(inst.U[a, i] * W[a, b] * inst.V[b, i] for a in range(d) for b in range(d))
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            sji = sum(inst.U[a, j] * W[a, b] * inst.V[b, i] for a in range(d) for b in range(d))
            acc += math.log1p(math.exp(7.0 * (sji - mu[i]))) / 7.0
        m = sii - mu[i] - acc / k
        total += math.log1p(math.exp(-m))
    total += 0.3 * n / (2 * d * d) * sum(W[a, b] ** 2 for a in range(d) for b in range(d))
    assert evaluate(W, mu, inst, cfg).objective_value == pytest.approx(total, rel=1e-12)


def test_state_invariants():
    inst, W, mu = _point(5, 9, 2)
    st_ = evaluate(W, mu, inst, TamConfig(0.4, 30.0, 0.1))
    assert np.allclose(st_.margins, np.diagonal(st_.scores) - st_.aggregates)
    assert np.all((st_.a > 0) & (st_.a < 1)) and np.all(st_.b <= 0.25)
    assert np.all(np.diagonal(st_.q) == 0)


def test_value_at_origin():
    n = 21
    cfg = TamConfig(0.15, 30.0, 1e-3)  # k = 3 = 0.15 * 20 exactly
    inst = sample_instance(4, n, 0)
    val = evaluate(np.zeros((4, 4)), np.zeros(n), inst, cfg).objective_value
    assert val == pytest.approx(n * logistic_loss(-math.log(2) / (0.15 * 30.0)), rel=1e-13)
    assert val == pytest.approx(psi_at_origin(n, cfg), rel=1e-13)
    cfg2 = TamConfig(0.37, 5.0, 0.0)
    val2 = evaluate(np.zeros((4, 4)), np.zeros(n), inst, cfg2).objective_value
    assert val2 == pytest.approx(psi_at_origin(n, cfg2), rel=1e-13)
    assert fit_loss(np.zeros((4, 4)), np.zeros(n), inst, cfg2) == pytest.approx(val2 / n)


def test_ridge_separability():
    inst, W, mu = _point(4, 6, 3)
    a = evaluate(W, mu, inst, TamConfig(0.3, 30.0, 0.7))
    b = evaluate(W, mu, inst, TamConfig(0.3, 30.0, 0.0))
    assert a.objective_value - b.objective_value == pytest.approx(0.7 * 6 / 32 * np.sum(W**2), rel=1e-12)
    assert a.fit + a.ridge == pytest.approx(a.objective_value, rel=1e-15)


def test_gradient_at_test_point():
    n, r, beta = 21, 0.15, 30.0
    cfg = TamConfig(r, beta, 0.0)
    inst = sample_instance(5, n, 4)
    mu0 = np.full(n, cfg.mu0())
    gW, gmu = gradient(np.zeros((5, 5)), mu0, inst, cfg)
    assert np.max(np.abs(gmu)) <= 1e-12
    a0 = float(sigmoid(-evaluate(np.zeros((5, 5)), mu0, inst, cfg).margins[0]))
    M = np.full((n, n), -1.0 / (n - 1))
    np.fill_diagonal(M, 1.0)
    assert np.allclose(gW, -a0 * inst.U @ M @ inst.V.T, atol=1e-13)


@pytest.mark.parametrize("seed", range(4))
def test_gradient_finite_differences(seed):
    inst, W, mu = _point(6, 8, seed)
    cfg = TamConfig(0.3, 5.0, 0.01)
    gW, gmu = gradient(W, mu, inst, cfg)
    h = 1e-5

    def f(W_, mu_):
        return evaluate(W_, mu_, inst, cfg).objective_value

    fdW = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        E = np.zeros_like(W)
        E[idx] = h
        fdW[idx] = (f(W + E, mu) - f(W - E, mu)) / (2 * h)
    fdmu = np.array([(f(W, mu + h * e) - f(W, mu - h * e)) / (2 * h) for e in np.eye(8)])
    assert np.linalg.norm(fdW - gW) <= 1e-6 * np.linalg.norm(gW)
    assert np.linalg.norm(fdmu - gmu) <= 1e-6 * np.linalg.norm(gmu)


def test_hessian_properties():
    inst, W, mu = _point(6, 8, 7)
    cfg = TamConfig(0.6, 30.0, 1.0)
    rng = make_rng(8)
    D1, D2 = rng.standard_normal((2, 6, 6))
    H1 = hessian_apply(W, mu, inst, cfg, D1)
    H2 = hessian_apply(W, mu, inst, cfg, D2)
    assert np.vdot(D1, H2) == pytest.approx(np.vdot(H1, D2), rel=1e-10)
    assert np.vdot(D1, H1) >= cfg.ridge_coef(8, 6) * np.vdot(D1, D1)
    h = 1e-5
    gp, _ = gradient(W + h * D1, mu, inst, cfg)
    gm, _ = gradient(W - h * D1, mu, inst, cfg)
    assert np.linalg.norm((gp - gm) / (2 * h) - H1) <= 1e-4 * np.linalg.norm(H1)
    with pytest.raises(ValueError):
        hessian_apply(W, mu, inst, cfg, np.zeros((5, 5)))


@given(st.integers(0, 10_000))
def test_joint_convexity_midpoint(seed):
    inst, W1, mu1 = _point(4, 7, seed, scale=2.0)
    _, W2, mu2 = _point(4, 7, seed + 1, scale=2.0)
    cfg = TamConfig(0.3, 30.0, 0.0)

    def f(W, mu):
        return evaluate(W, mu, inst, cfg).objective_value

    mid = f(0.5 * (W1 + W2), 0.5 * (mu1 + mu2))
    assert mid <= 0.5 * f(W1, mu1) + 0.5 * f(W2, mu2) + 1e-10


def test_exact_margins_certificate():
    S = make_rng(3).standard_normal((12, 12))
    m = exact_tam_margins(S, 0.25)
    for i in range(12):
        comp = np.delete(S[:, i], i)
        assert m[i] == pytest.approx(S[i, i] - tam_exact(comp, 0.25), abs=1e-12)


def test_shape_errors():
    inst = sample_instance(3, 4, 0)
    with pytest.raises(ValueError):
        evaluate(np.zeros((3, 3)), np.zeros(5), inst, TamConfig(0.5))
    with pytest.raises(ValueError):
        TamConfig(0.0)
    with pytest.raises(ValueError):
        TamConfig(0.5, beta=-1.0)


# --- cross-entropy ---------------------------------------------------------------


def test_ce_structure_and_origin():
    inst, W, _ = _point(5, 9, 5, scale=3.0)
    val, _ = ce_objective_and_gradient(W, inst, 0.0)
    S = inst.U.T @ W @ inst.V
    assert val == pytest.approx(float(logistic_loss(ce_margins(S)).sum()), rel=1e-10)
    v0, _ = ce_objective_and_gradient(np.zeros((5, 5)), inst, 0.3)
    assert v0 == pytest.approx(9 * math.log(9), rel=1e-14)


def test_ce_overflow_safe():
    inst, W, _ = _point(4, 6, 6, scale=1e4)
    val, g = ce_objective_and_gradient(W, inst, 0.1)
    assert math.isfinite(val) and np.all(np.isfinite(g))


def test_ce_gradient_finite_differences():
    inst, W, _ = _point(6, 8, 9)
    lam = 0.2
    _, g = ce_objective_and_gradient(W, inst, lam)
    h = 1e-5
    fd = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        E = np.zeros_like(W)
        E[idx] = h
        fd[idx] = (ce_objective_and_gradient(W + E, inst, lam)[0]
                   - ce_objective_and_gradient(W - E, inst, lam)[0]) / (2 * h)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


# --- streaming evaluators ------------------------------------------------------------


@pytest.mark.parametrize("block", [1, 5, 64])
def test_streaming_tam_matches_reference(block):
    inst, W, mu = _point(7, 23, 10, scale=3.0)
    cfg = TamConfig(0.2, 30.0, 0.05)
    ref = evaluate(W, mu, inst, cfg)
    gW, gmu = gradient(W, mu, inst, cfg)
    res = TamProblem(inst, cfg, block=block).evaluate(W, mu)
    assert res.value == pytest.approx(ref.objective_value, rel=1e-13)
    assert np.allclose(res.margins, ref.margins, rtol=1e-12, atol=1e-12)
    assert np.allclose(res.grad_W, gW, rtol=1e-11, atol=1e-13)
    assert np.allclose(res.grad_mu, gmu, rtol=1e-11, atol=1e-14)


def test_streaming_tam_single_precision_close():
    inst, W, mu = _point(20, 200, 11, scale=5.0)
    cfg = TamConfig(0.15, 30.0, 1e-3)
    a = TamProblem(inst, cfg).evaluate(W, mu)
    b = TamProblem(inst, cfg, dtype=np.float32).evaluate(W, mu)
    assert b.value == pytest.approx(a.value, rel=1e-4)
    assert np.linalg.norm(b.grad_W - a.grad_W) <= 1e-4 * np.linalg.norm(a.grad_W)


def test_streaming_ce_matches_reference():
    inst, W, _ = _point(6, 17, 12, scale=4.0)
    val, g = ce_objective_and_gradient(W, inst, 0.3)
    res = CeProblem(inst, 0.3, block=4).evaluate(W)
    assert res.value == pytest.approx(val, rel=1e-13)
    assert np.allclose(res.grad_W, g, rtol=1e-11, atol=1e-13)
    S = inst.U.T @ W @ inst.V
    assert np.allclose(res.margins, ce_margins(S), atol=1e-12)


def test_streaming_skips_negligible_tail_exactly():
    # scores far below the threshold contribute < exp(-40) and are dropped
    inst, W, mu = _point(5, 30, 13, scale=1.0)
    cfg = TamConfig(0.2, 30.0, 0.0)
    mu = mu + 50.0
    ref = evaluate(W, mu, inst, cfg)
    res = TamProblem(inst, cfg).evaluate(W, mu)
    assert np.allclose(res.margins, ref.margins, rtol=1e-14, atol=1e-14)
