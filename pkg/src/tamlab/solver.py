"""Minimizers for the joint TAM objective and the cross-entropy objective.

Both objectives are smooth and, with a positive ridge, strongly convex, so a
limited-memory quasi-Newton method with a strong-Wolfe line search reaches the
unique optimum.  We use scipy's L-BFGS-B driver (Moré-Thuente line search)
with our own stopping rule on the full gradient norm, scaled by ``max(1, |Psi|)``
because SAT-phase optima have large norms and tiny losses.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .objective import CeProblem, TamConfig, TamProblem, tail_count
from .special import LOG2

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveOptions:
    grad_tol: float = 1e-6
    max_iters: int = 5000
    memory: int = 20
    verbose: bool = False
    precision: str = "float64"  # or "float32" for the score products

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


@dataclass(eq=False)
class Solution:
    W_hat: np.ndarray
    mu_hat: np.ndarray | None
    objective: float
    loss: float  # fit loss per sample, ridge excluded
    nu: float  # ||W||_F / d
    margins: np.ndarray
    diag_scores: np.ndarray
    percentiles: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    grad_norm: float
    history: list = field(default_factory=list, repr=False)
    exact_margins: np.ndarray | None = field(default=None, repr=False)  # TAM runs only

    @property
    def aggregates(self) -> np.ndarray:
        return self.diag_scores - self.margins


def frobenius_bound(cfg: TamConfig) -> float:
    """Upper bound on nu^2 at the TAM optimum: (2 / lam)(log 2 + log 2 / (r beta))."""
    return 2.0 / cfg.lam * (LOG2 + LOG2 / (cfg.r * cfg.beta))


class _Tracker:
    """Caches the last evaluation so the stopping rule reuses its gradient."""

    def __init__(self, fun_grad):
        self.fun_grad = fun_grad
        self.x = None
        self.f = None
        self.g = None
        self.evals = 0
        self.history = []

    def __call__(self, x):
        f, g = self.fun_grad(x)
        self.evals += 1
        self.x = x.copy()
        self.f = f
        self.g = g
        return f, g

    def at(self, x):
        if self.x is None or not np.array_equal(x, self.x):
            self(x)
        return self.f, self.g


def _run_lbfgs(fun_grad, x0, opts: SolveOptions):
    tr = _Tracker(fun_grad)
    state = {"iters": 0, "converged": False}

    def check(x):
        f, g = tr.at(x)
        gn = float(np.linalg.norm(g))
        tr.history.append((f, gn))
        return gn <= opts.grad_tol * max(1.0, abs(f)), f, gn

    done, f, gn = check(x0)
    if done:
        return x0, tr, 0, True

    def callback(intermediate_result):
        state["iters"] += 1
        ok, f, gn = check(intermediate_result.x)
        if opts.verbose and state["iters"] % 25 == 0:
            log.info("iter %d  f=%.10g  |g|=%.3g  evals=%d", state["iters"], f, gn, tr.evals)
        if ok:
            state["converged"] = True
            raise StopIteration

    res = optimize.minimize(
        tr, x0, jac=True, method="L-BFGS-B", callback=callback,
        options=dict(maxiter=opts.max_iters, maxfun=20 * opts.max_iters, maxcor=opts.memory,
                     gtol=0.0, ftol=0.0, maxls=50),
    )
    x = res.x
    converged = state["converged"]
    if not converged:
        ok, _, _ = check(x)
        converged = ok
        if not ok:
            log.warning("L-BFGS stopped without meeting the gradient tolerance: %s", res.message)
    return x, tr, state["iters"], converged


def column_diagnostics(W, inst, r: float | None = None, block: int = 512):
    """Signal percentiles and, if ``r`` is given, exact-TAM margins, without forming S.

    Returns ``(percentiles, exact_margins)`` where the percentile is
    ``#{j != i : s_ji <= s_ii} / (n - 1)`` and the exact margin is ``s_ii``
    minus the mean of the ``ceil(r (n - 1))`` largest competitors
    (``None`` when ``r`` is None).
    """
    n = inst.n
    PT = np.asarray(W, dtype=float).T @ inst.U
    VT = np.ascontiguousarray(inst.V.T)
    pct = np.empty(n)
    exact = np.empty(n) if r is not None else None
    k = tail_count(r, n - 1) if r is not None else 0
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        St = VT[lo:hi] @ PT
        idx = np.arange(hi - lo)
        diag = St[idx, np.arange(lo, hi)].copy()
        pct[lo:hi] = (np.count_nonzero(St <= diag[:, None], axis=1) - 1) / (n - 1)
        if exact is not None:
            St[idx, np.arange(lo, hi)] = -np.inf
            top = -np.partition(-St, k - 1, axis=1)[:, :k]
            exact[lo:hi] = diag - top.mean(axis=1)
    return pct, exact


def percentiles_streaming(W, inst, block: int = 512) -> np.ndarray:
    """Omega_i = #{j != i : s_ji <= s_ii} / (n - 1) without forming S."""
    return column_diagnostics(W, inst, None, block)[0]


def minimize_tam(inst, cfg: TamConfig, opts: SolveOptions = SolveOptions(),
                 W0=None, mu0=None) -> Solution:
    """Jointly minimize the smoothed TAM objective over (W, mu).

    Starts from ``W = 0`` and ``mu_i = mu0`` where the mu-gradient vanishes,
    unless a warm start is supplied.
    """
    if inst.n < 2:
        raise ValueError("need n >= 2")
    problem = TamProblem(inst, cfg, dtype=opts.dtype)
    d, n = inst.d, inst.n
    W0 = np.zeros((d, d)) if W0 is None else np.asarray(W0, dtype=float)
    mu0 = np.full(n, cfg.mu0()) if mu0 is None else np.asarray(mu0, dtype=float)
    x0 = problem.join(W0, mu0)
    x, tr, iters, converged = _run_lbfgs(problem.fun_grad, x0, opts)
    W, mu = problem.split(x)
    W = W.copy()
    mu = mu.copy()
    res = problem.evaluate(W, mu, need_grad=False)
    pct, exact = column_diagnostics(W, inst, cfg.r)
    f, g = tr.at(x)
    return Solution(
        W_hat=W, mu_hat=mu, objective=f, loss=res.fit / n, nu=float(np.linalg.norm(W)) / d,
        margins=res.margins, diag_scores=res.diag, percentiles=pct, iterations=iters,
        evaluations=tr.evals, converged=converged, grad_norm=float(np.linalg.norm(g)),
        history=tr.history, exact_margins=exact,
    )


def minimize_ce(inst, lam: float, opts: SolveOptions = SolveOptions(), W0=None) -> Solution:
    """Minimize the ridge-regularized softmax cross-entropy over W."""
    if not lam > 0:
        raise ValueError("minimize_ce needs a positive ridge")
    problem = CeProblem(inst, lam, dtype=opts.dtype)
    d, n = inst.d, inst.n
    x0 = np.zeros(d * d) if W0 is None else np.asarray(W0, dtype=float).ravel()
    x, tr, iters, converged = _run_lbfgs(problem.fun_grad, x0, opts)
    W = x.reshape(d, d).copy()
    res = problem.evaluate(W, need_grad=False)
    f, g = tr.at(x)
    return Solution(
        W_hat=W, mu_hat=None, objective=f, loss=res.fit / n, nu=float(np.linalg.norm(W)) / d,
        margins=res.margins, diag_scores=res.diag, percentiles=percentiles_streaming(W, inst),
        iterations=iters, evaluations=tr.evals, converged=converged,
        grad_norm=float(np.linalg.norm(g)), history=tr.history,
    )
