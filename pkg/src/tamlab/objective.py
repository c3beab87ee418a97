"""Tail-average margin (TAM) functionals and the joint TAM learning objective.

For a column of competitor scores ``x`` of length ``m`` and ``k = ceil(r m)``,
TAM is the mean of the ``k`` largest entries.  It admits the convex
variational form ``min_mu mu + (1/k) sum_j (x_j - mu)_+`` whose smoothed
version replaces ``(.)_+`` by ``phi_beta(t) = softplus(beta t) / beta``.

The joint learning objective over a memory ``W`` and per-sample thresholds
``mu`` is

    Psi(W, mu) = sum_i ell(m_i) + lam n / (2 d^2) ||W||_F^2,
    m_i = s_ii - mu_i - (1/k) sum_{j != i} phi_beta(s_ji - mu_i),

with ``k = ceil(r (n - 1))``.  Two evaluation paths exist: :func:`evaluate`
keeps every per-entry weight (small problems, Hessian products), while
:class:`TamProblem` streams column blocks through a fused kernel and never
holds the full score matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import ce_block, tam_block
from .special import LOG2, logistic_loss, sigmoid, smooth_plus

# Guard for ceil(r (n - 1)) when r (n - 1) is an integer up to rounding.
_CEIL_SLACK = 1e-9


def tail_count(r: float, m: int) -> int:
    """k = ceil(r m) clipped to [1, m]."""
    return int(min(m, max(1, math.ceil(r * m - _CEIL_SLACK))))


@dataclass(frozen=True)
class TamConfig:
    """Tail fraction ``r``, smoothing ``beta`` and ridge ``lam``."""

    r: float
    beta: float = 30.0
    lam: float = 1e-6

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ValueError(f"r must lie in (0, 1], got {self.r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")

    def k(self, n: int) -> int:
        if n < 2:
            raise ValueError("the TAM objective needs n >= 2")
        return tail_count(self.r, n - 1)

    def mu0(self) -> float:
        """Threshold at which the mu-gradient vanishes for W = 0 (r < 1)."""
        if self.r >= 1:
            return -30.0 / self.beta
        return -math.log(self.r / (1.0 - self.r)) / self.beta

    def ridge_coef(self, n: int, d: int) -> float:
        return self.lam * n / d**2


# ---------------------------------------------------------------------------
# scalar TAM functionals


def tam_exact(x, r: float) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty vector")
    k = tail_count(r, x.size)
    return float(np.sort(x)[::-1][:k].mean())


def tam_exact_variational(x, r: float) -> tuple[float, float]:
    """Value of min_mu mu + (1/k) sum (x - mu)_+ and its minimizer, the k-th largest."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty vector")
    k = tail_count(r, x.size)
    mu = float(np.sort(x)[::-1][k - 1])
    return mu + float(np.maximum(x - mu, 0.0).sum()) / k, mu


def tam_smoothed(x, r: float, beta: float, tol: float = 1e-12, maxiter: int = 200):
    """Smoothed TAM value and minimizer ``mu``.

    Solves ``(1/k) sum sigma(beta (x - mu)) = 1`` by Newton steps safeguarded
    with bisection on the bracket where the monotone residual changes sign.
    """
    x = np.asarray(x, dtype=float).ravel()
    m = x.size
    if m == 0:
        raise ValueError("empty vector")
    if not beta > 0:
        raise ValueError("beta must be positive")
    k = tail_count(r, m)
    if k == m:
        # the stationarity equation has no finite root: value tends to the mean
        raise ValueError("smoothed TAM needs k < m (r < 1)")
    lo = x.min() - math.log(m / k) / beta
    hi = x.max() + math.log(1.0 / k + 1e-300) / beta if k > 1 else x.max()
    hi = max(hi, lo)
    # residual h(mu) = (1/k) sum sigma(beta (x - mu)) - 1 is decreasing in mu
    while (sigmoid(beta * (x - hi)).sum() / k - 1.0) > 0:
        hi += 1.0 / beta
    while (sigmoid(beta * (x - lo)).sum() / k - 1.0) < 0:
        lo -= 1.0 / beta
    mu = 0.5 * (lo + hi)
    for _ in range(maxiter):
        q = sigmoid(beta * (x - mu))
        h = q.sum() / k - 1.0
        if h > 0:
            lo = mu
        else:
            hi = mu
        if abs(h) <= tol:
            break
        dh = -beta * (q * (1.0 - q)).sum() / k
        step = mu - h / dh if dh != 0 else 0.5 * (lo + hi)
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    value = mu + smooth_plus(x - mu, beta).sum() / k
    return float(value), float(mu)


# ---------------------------------------------------------------------------
# joint objective, full-state path


@dataclass(frozen=True, eq=False)
class EvalState:
    objective_value: float
    fit: float  # sum_i ell(m_i)
    ridge: float
    scores: np.ndarray
    margins: np.ndarray
    aggregates: np.ndarray
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray  # n x n, diagonal set to 0
    k: int


def _check_shapes(W, mu, inst):
    if W.shape != (inst.d, inst.d):
        raise ValueError(f"W must be {inst.d}x{inst.d}, got {W.shape}")
    if mu.shape != (inst.n,):
        raise ValueError(f"mu must have length {inst.n}, got {mu.shape}")


def evaluate(W, mu, inst, cfg: TamConfig) -> EvalState:
    W = np.asarray(W, dtype=float)
    mu = np.asarray(mu, dtype=float)
    _check_shapes(W, mu, inst)
    n, d = inst.n, inst.d
    k = cfg.k(n)
    S = inst.U.T @ W @ inst.V
    T = S - mu[None, :]
    off = ~np.eye(n, dtype=bool)
    phi = np.where(off, smooth_plus(T, cfg.beta), 0.0)
    q = np.where(off, sigmoid(cfg.beta * T), 0.0)
    c = mu + phi.sum(axis=0) / k
    m = np.diagonal(S) - c
    a = sigmoid(-m)
    fit = float(logistic_loss(m).sum())
    ridge = 0.5 * cfg.ridge_coef(n, d) * float(np.vdot(W, W))
    return EvalState(fit + ridge, fit, ridge, S, m, c, a, a * (1.0 - a), q, k)


def _q_matrix(state: EvalState) -> np.ndarray:
    Q = state.q / state.k
    np.fill_diagonal(Q, -1.0)
    return Q


def gradient(W, mu, inst, cfg: TamConfig):
    """(dPsi/dW, dPsi/dmu) = (U Q diag(a) V^T + lam n / d^2 W, -diag(a) Q^T 1)."""
    st = evaluate(W, mu, inst, cfg)
    Q = _q_matrix(st)
    gS = Q * st.a[None, :]
    gW = inst.U @ gS @ inst.V.T + cfg.ridge_coef(inst.n, inst.d) * np.asarray(W, dtype=float)
    gmu = -st.a * Q.sum(axis=0)
    return gW, gmu


def hessian_apply(W, mu, inst, cfg: TamConfig, Delta):
    """Hessian of Psi in W at fixed mu applied to ``Delta`` (matrix-free)."""
    Delta = np.asarray(Delta, dtype=float)
    if Delta.shape != (inst.d, inst.d):
        raise ValueError("Delta must be d x d")
    st = evaluate(W, mu, inst, cfg)
    Q = _q_matrix(st)
    R = cfg.beta / st.k * st.q * (1.0 - st.q)  # diagonal is zero since q_ii = 0
    D = inst.U.T @ Delta @ inst.V
    proj = np.einsum("ji,ji->i", Q, D)
    MD = Q * (st.b * proj)[None, :] + st.a[None, :] * R * D
    return cfg.ridge_coef(inst.n, inst.d) * Delta + inst.U @ MD @ inst.V.T


def fit_loss(W, mu, inst, cfg: TamConfig) -> float:
    """Average logistic loss of the TAM margins, ridge excluded."""
    return evaluate(W, mu, inst, cfg).fit / inst.n


def exact_tam_margins(S, r: float) -> np.ndarray:
    """s_ii minus the exact TAM of the column's competitors."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    k = tail_count(r, n - 1)
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    top = -np.partition(-off, k - 1, axis=0)[:k]
    return np.diagonal(S) - top.mean(axis=0)


# ---------------------------------------------------------------------------
# cross-entropy


def ce_objective_and_gradient(W, inst, lam: float):
    """Softmax cross-entropy over targets plus ridge, with its W-gradient."""
    W = np.asarray(W, dtype=float)
    if W.shape != (inst.d, inst.d):
        raise ValueError("W must be d x d")
    n, d = inst.n, inst.d
    S = inst.U.T @ W @ inst.V
    mx = S.max(axis=0)
    lse = mx + np.log(np.exp(S - mx[None, :]).sum(axis=0))
    coef = lam * n / d**2
    val = float((lse - np.diagonal(S)).sum()) + 0.5 * coef * float(np.vdot(W, W))
    P = np.exp(S - lse[None, :])
    P[np.diag_indices(n)] -= 1.0
    return val, inst.U @ P @ inst.V.T + coef * W


def ce_margins(S) -> np.ndarray:
    """s_ii - LSE_{j != i} s_ji for each column."""
    S = np.asarray(S, dtype=float)
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    mx = off.max(axis=0)
    return np.diagonal(S) - (mx + np.log(np.exp(off - mx[None, :]).sum(axis=0)))


# ---------------------------------------------------------------------------
# streaming path used by the solver


def _block_size(n: int, budget: int = 16 * 2**20) -> int:
    return int(max(1, min(n, budget // max(n, 1))))


@dataclass(eq=False)
class StreamResult:
    value: float
    fit: float
    ridge: float
    grad_W: np.ndarray | None
    grad_mu: np.ndarray | None
    margins: np.ndarray
    diag: np.ndarray


class TamProblem:
    """Column-blocked evaluation of the joint objective and its gradient.

    ``dtype=np.float32`` runs the two score products in single precision;
    column reductions are always accumulated in double precision.
    """

    def __init__(self, inst, cfg: TamConfig, dtype=np.float64, block: int | None = None):
        self.inst = inst
        self.cfg = cfg
        self.k = cfg.k(inst.n)
        self.dtype = np.dtype(dtype)
        self.block = block or _block_size(inst.n)
        self.U = np.ascontiguousarray(inst.U, dtype=self.dtype)
        self.VT = np.ascontiguousarray(inst.V.T, dtype=self.dtype)
        self.V = np.ascontiguousarray(inst.V, dtype=self.dtype)
        self.coef = cfg.ridge_coef(inst.n, inst.d)

    @property
    def size(self) -> int:
        return self.inst.d**2 + self.inst.n

    def split(self, x):
        d = self.inst.d
        return x[: d * d].reshape(d, d), x[d * d:]

    def join(self, W, mu):
        return np.concatenate([np.asarray(W, dtype=float).ravel(), np.asarray(mu, dtype=float)])

    def evaluate(self, W, mu, need_grad: bool = True) -> StreamResult:
        n, d = self.inst.n, self.inst.d
        W = np.asarray(W, dtype=float)
        mu = np.asarray(mu, dtype=float)
        _check_shapes(W, mu, self.inst)
        PT = W.T.astype(self.dtype) @ self.U  # d x n, rows of U^T W transposed
        # gradient in W is U G V^T = (sum_b V[:, b] (G^T[b] U^T))^T, accumulated in d x d
        GT = np.zeros((d, d)) if need_grad else None
        c = np.empty(n)
        m = np.empty(n)
        a = np.empty(n)
        qs = np.empty(n)
        for lo in range(0, n, self.block):
            hi = min(n, lo + self.block)
            St = self.VT[lo:hi] @ PT  # b x n; row i is score column lo + i
            rows = np.arange(lo, hi)
            tam_block(St, rows, mu[lo:hi], float(self.cfg.beta), float(self.k),
                      c[lo:hi], m[lo:hi], a[lo:hi], qs[lo:hi], need_grad)
            if need_grad:
                GT += self.V[:, lo:hi] @ (St @ self.U.T)
        fit = float(logistic_loss(m).sum())
        ridge = 0.5 * self.coef * float(np.vdot(W, W))
        gW = gmu = None
        if need_grad:
            gW = GT.T + self.coef * W
            gmu = a * (1.0 - qs / self.k)
        return StreamResult(fit + ridge, fit, ridge, gW, gmu, m, m + c)

    def fun_grad(self, x):
        W, mu = self.split(x)
        res = self.evaluate(W, mu, True)
        return res.value, self.join(res.grad_W, res.grad_mu)


class CeProblem:
    """Column-blocked cross-entropy objective and gradient in W."""

    def __init__(self, inst, lam: float, dtype=np.float64, block: int | None = None):
        self.inst = inst
        self.lam = lam
        self.dtype = np.dtype(dtype)
        self.block = block or _block_size(inst.n)
        self.U = np.ascontiguousarray(inst.U, dtype=self.dtype)
        self.VT = np.ascontiguousarray(inst.V.T, dtype=self.dtype)
        self.V = np.ascontiguousarray(inst.V, dtype=self.dtype)
        self.coef = lam * inst.n / inst.d**2

    @property
    def size(self) -> int:
        return self.inst.d**2

    def evaluate(self, W, need_grad: bool = True) -> StreamResult:
        n, d = self.inst.n, self.inst.d
        W = np.asarray(W, dtype=float)
        PT = W.T.astype(self.dtype) @ self.U
        GT = np.zeros((d, d)) if need_grad else None
        lse = np.empty(n)
        m = np.empty(n)
        diag = np.empty(n)
        for lo in range(0, n, self.block):
            hi = min(n, lo + self.block)
            St = self.VT[lo:hi] @ PT
            rows = np.arange(lo, hi)
            diag[lo:hi] = St[np.arange(hi - lo), rows]
            ce_block(St, rows, lse[lo:hi], m[lo:hi], need_grad)
            if need_grad:
                GT += self.V[:, lo:hi] @ (St @ self.U.T)
        fit = float((lse - diag).sum())
        ridge = 0.5 * self.coef * float(np.vdot(W, W))
        gW = GT.T + self.coef * W if need_grad else None
        return StreamResult(fit + ridge, fit, ridge, gW, None, m, diag)

    def fun_grad(self, x):
        d = self.inst.d
        W = x.reshape(d, d)
        res = self.evaluate(W, True)
        return res.value, res.grad_W.ravel()


def psi_at_origin(n: int, cfg: TamConfig) -> float:
    """Psi(0, 0) = n ell(-((n - 1) / k) log 2 / beta)."""
    k = cfg.k(n)
    return n * float(logistic_loss(-((n - 1) / k) * LOG2 / cfg.beta))
