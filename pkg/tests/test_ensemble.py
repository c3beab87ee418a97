import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamlab.ensemble import Instance, derive_seed, make_rng, sample_instance, score_column, score_matrix


def test_derive_seed_is_pure_and_separates_indices():
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
    seeds = {derive_seed(3, i, j) for i in range(20) for j in range(20)}
    assert len(seeds) == 400
    assert derive_seed(3, 1, 2) != derive_seed(4, 1, 2)
    assert derive_seed(3, 1, 2) != derive_seed(3, 2, 1)
    assert 0 <= derive_seed(0) < 2**64


def test_sample_instance_reproducible_and_frozen():
    a = sample_instance(5, 7, 11)
    b = sample_instance(5, 7, 11)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
    assert not np.array_equal(a.U, sample_instance(5, 7, 12).U)
    assert a.U.shape == (5, 7) and a.V.shape == (5, 7)
    assert a.alpha == pytest.approx(7 / 25)
    with pytest.raises(ValueError):
        a.U[0, 0] = 1.0


def test_entry_variance_is_one_over_d():
    d, n = 50, 4000
    inst = sample_instance(d, n, 5)
    for M in (inst.U, inst.V):
        assert M.mean() == pytest.approx(0.0, abs=5 * (1 / d / (d * n)) ** 0.5)
        assert M.var() * d == pytest.approx(1.0, abs=0.01)
    # U and V are independent
    assert abs(np.mean(inst.U * inst.V)) * d < 0.01


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Instance(2, 3, np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        sample_instance(0, 3, 1)


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32))
def test_score_matrix_is_bilinear_form(d, n, seed):
    inst = sample_instance(d, n, seed)
    W = make_rng(seed + 1).standard_normal((d, d))
    S = score_matrix(W, inst)
    j, i = n // 2, n - 1
    assert S[j, i] == pytest.approx(inst.U[:, j] @ W @ inst.V[:, i], rel=1e-12, abs=1e-12)
    assert np.allclose(score_column(W, inst, i), S[:, i])


def test_score_column_bounds_and_shape_checks():
    inst = sample_instance(3, 4, 0)
    with pytest.raises((ValueError, IndexError)):
        score_column(np.eye(3), inst, 4)
    with pytest.raises(ValueError):
        score_matrix(np.eye(4), inst)
