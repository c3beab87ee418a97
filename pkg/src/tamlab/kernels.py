"""Fused per-column kernels for the smoothed TAM and cross-entropy objectives.

Each column of a score block is reduced to its aggregate ``c_i`` and the
column is overwritten in place with ``dPsi / dS``.  The TAM loop is written
branch-free with polynomial ``exp`` and ``log1p`` so that LLVM vectorizes it;
both helpers are accurate to a few ulp on the ranges where they are used.
Entries with ``beta (s - mu) < -SKIP`` contribute less than ``exp(-SKIP)`` to
every sum and are treated as exact zeros.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

SKIP = 40.0

_FM = {"reassoc", "contract", "nsz", "arcp"}
_JIT = dict(cache=True, fastmath=_FM, error_model="numpy")

_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.0 / math.log(2.0)


@nb.njit(inline="always", **_JIT)
def _exp_neg(x):
    """exp(x) for x in [-42, 0]: Cody-Waite reduction and a degree-13 polynomial."""
    kf = math.floor(x * _INV_LN2 + 0.5)
    r = (x - kf * _LN2_HI) - kf * _LN2_LO
    p = 1.0 / 6227020800.0
    p = p * r + 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    p = p * r + 1.0
    # 2^kf with kf in [-61, 0], built exactly from an integer shift
    return p / np.float64(np.int64(1) << np.int64(-kf))


@nb.njit(inline="always", **_JIT)
def _log1p_unit(e):
    """log(1 + e) for e in [0, 1] via 2 atanh(e / (2 + e)); z^2 <= 1/9."""
    z = e / (2.0 + e)
    z2 = z * z
    p = 1.0 / 33.0
    p = p * z2 + 1.0 / 31.0
    p = p * z2 + 1.0 / 29.0
    p = p * z2 + 1.0 / 27.0
    p = p * z2 + 1.0 / 25.0
    p = p * z2 + 1.0 / 23.0
    p = p * z2 + 1.0 / 21.0
    p = p * z2 + 1.0 / 19.0
    p = p * z2 + 1.0 / 17.0
    p = p * z2 + 1.0 / 15.0
    p = p * z2 + 1.0 / 13.0
    p = p * z2 + 1.0 / 11.0
    p = p * z2 + 1.0 / 9.0
    p = p * z2 + 1.0 / 7.0
    p = p * z2 + 1.0 / 5.0
    p = p * z2 + 1.0 / 3.0
    p = p * z2 + 1.0
    return 2.0 * z * p


@nb.njit(**_JIT)
def _tam_run(col, mi, beta):
    """Overwrite ``col`` with q = sigma(beta (s - mu)); return the three sums.

    The loop runs over a whole contiguous segment from index 0, which lets
    LLVM drop negative-index handling and vectorize it.
    """
    lin = 0.0
    logs = 0.0
    qs = 0.0
    for j in range(col.shape[0]):
        t = beta * (col[j] - mi)
        x = -abs(t)
        x = x if x > -SKIP - 1.0 else -SKIP - 1.0
        e = _exp_neg(x)
        e = e if t >= -SKIP else 0.0
        inv = 1.0 / (1.0 + e)
        num = 1.0 if t > 0 else e
        q = num * inv
        lin += t if t > 0 else 0.0
        logs += _log1p_unit(e)
        qs += q
        col[j] = q
    return lin, logs, qs


@nb.njit(**_JIT)
def elementwise_exp_neg(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = _exp_neg(x[i])
    return out


@nb.njit(**_JIT)
def elementwise_log1p_unit(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = _log1p_unit(x[i])
    return out


@nb.njit(**_JIT)
def tam_block(St, diag_rows, mu, beta, k, c_out, m_out, a_out, qsum_out, write_grad):
    """Reduce score columns in place; ``St`` is the transposed block (b x n, C order).

    Row ``i`` of ``St`` holds score column ``i`` and ``diag_rows[i]`` is the
    position of its matched target.
    Per-column outputs go to ``c_out``, ``m_out``, ``a_out`` and ``qsum_out``
    (the sum of ``q_ji`` over ``j != i``).  If ``write_grad`` the column is left
    holding ``a_i Q[:, i]`` with ``Q[ii] = -1`` and ``Q[ji] = q_ji / k``;
    otherwise it holds the raw ``q_ji``.
    """
    b, n = St.shape
    inv_beta = 1.0 / beta
    for i in range(b):
        col = St[i]
        mi = mu[i]
        di = diag_rows[i]
        sii = col[di]
        l1, g1, q1 = _tam_run(col[:di], mi, beta)
        l2, g2, q2 = _tam_run(col[di + 1:], mi, beta)
        c = mi + ((l1 + l2) + (g1 + g2)) * inv_beta / k
        m = sii - c
        if m >= 0:
            em = math.exp(-m)
            a = em / (1.0 + em)
        else:
            a = 1.0 / (1.0 + math.exp(m))
        c_out[i] = c
        m_out[i] = m
        a_out[i] = a
        qsum_out[i] = q1 + q2
        if write_grad:
            scale = a / k
            for j in range(n):
                col[j] *= scale
            col[di] = -a
        else:
            col[di] = 0.0


@nb.njit(cache=True, error_model="numpy")
def ce_block(St, diag_rows, lse_out, m_out, write_grad):
    """Column-wise log-sum-exp for cross-entropy; gradient softmax - e_i in place.

    ``St`` is laid out as in :func:`tam_block`.  ``m_out`` receives
    ``s_ii - LSE_{j != i} s_ji``.
    """
    b, n = St.shape
    for i in range(b):
        S = St[i]
        di = diag_rows[i]
        mx = -np.inf
        rest_mx = -np.inf
        for j in range(n):
            v = S[j]
            if v > mx:
                mx = v
            if j != di and v > rest_mx:
                rest_mx = v
        tot = 0.0
        rest = 0.0
        for j in range(n):
            tot += math.exp(S[j] - mx)
            if j != di:
                rest += math.exp(S[j] - rest_mx)
        lse = mx + math.log(tot)
        lse_out[i] = lse
        m_out[i] = S[di] - (rest_mx + math.log(rest))
        if write_grad:
            for j in range(n):
                S[j] = math.exp(S[j] - lse)
            S[di] -= 1.0
