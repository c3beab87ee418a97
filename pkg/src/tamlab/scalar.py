"""Scalar variational theory of the joint TAM minimizer.

The high-dimensional optimizer is summarized by two order parameters: the
competitor-score scale ``nu`` (the limit of ||W||_F / d) and the
susceptibility ``chi`` (the normalized inverse-Hessian trace).  They solve

    inf_nu sup_chi  P(nu, chi) = lam nu^2 / 2 - nu^2 / (2 alpha chi) + M_r(nu, chi)

where ``M_r`` is the Gaussian-averaged Moreau envelope of the logistic loss
shifted by the scalar TAM threshold ``c_r(nu)``.

Numerical notes
---------------
Expectations over the competitor variable Z are computed with a graded
composite rule centred on the softplus kink at ``Z = mu / nu``.  Expectations
over the diagonal variable G are computed after the change of variables
``y = Prox_chi(nu G - c)``: the inverse map ``G(y) = (c + y - chi sigma(-y)) / nu``
is explicit, so no proximal solves are needed inside the integrals and the
integrand is smooth on the unit scale in ``y``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .special import (
    GAUSS_CUTOFF,
    LOG2,
    SQRT_2PI,
    gaussian_rule,
    graded_rule,
    logistic_loss,
    normal_cdf,
    normal_pdf,
    normal_quantile,
    sigmoid,
    smooth_plus,
    smooth_plus_d2,
    binary_entropy_neg,
)

DEFAULT_PANEL_ORDER = 16


@dataclass(frozen=True)
class ScalarParams:
    """Load ``alpha = n / d^2``, tail fraction ``r``, smoothing ``beta``, ridge ``lam``."""

    alpha: float
    r: float
    beta: float
    lam: float
    panel_order: int = DEFAULT_PANEL_ORDER

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.r < 1:
            raise ValueError(f"r must lie in (0, 1), got {self.r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.panel_order < 2:
            raise ValueError("panel_order must be at least 2")

    def refined(self) -> "ScalarParams":
        """Same parameters with the quadrature panel order doubled."""
        return ScalarParams(self.alpha, self.r, self.beta, self.lam, 2 * self.panel_order)


def kappa_r(r: float) -> float:
    """Tail mean E[Z | Z >= Phi^{-1}(1 - r)] = phi(Phi^{-1}(1 - r)) / r."""
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    return float(normal_pdf(normal_quantile(1.0 - r)) / r)


# ---------------------------------------------------------------------------
# scalar TAM functional c_r(nu)


@dataclass(frozen=True)
class TailStats:
    mu: float
    c: float
    e_phi2: float  # E phi_beta''(nu Z - mu)
    residual: float


def _z_rule(nu, beta, mu, m):
    return gaussian_rule([(mu / nu, 1.0 / (beta * nu))], m=m)


@lru_cache(maxsize=4096)
def tail_stats(nu: float, r: float, beta: float, m: int = DEFAULT_PANEL_ORDER) -> TailStats:
    """Minimizer ``mu_r(nu)``, value ``c_r(nu)`` and ``E phi''`` in one pass."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    span = nu * GAUSS_CUTOFF + 60.0 / beta
    mu = nu * float(normal_quantile(1.0 - r))
    for _ in range(8):
        rule = _z_rule(nu, beta, mu, m)
        z = rule.x

        def excess(t):
            return rule.integrate(sigmoid(beta * (nu * z - t))) - r

        new = optimize.brentq(excess, -span, span, xtol=1e-15 * max(1.0, span), rtol=1e-15,
                              maxiter=500)
        moved = abs(new - mu)
        mu = new
        if moved < 1e-3 / (beta * nu) + 1e-14 * abs(mu):
            break
    rule = _z_rule(nu, beta, mu, m)
    t = nu * rule.x - mu
    c = mu + rule.integrate(smooth_plus(t, beta)) / r
    e2 = rule.integrate(smooth_plus_d2(t, beta))
    res = rule.integrate(sigmoid(beta * t)) - r
    return TailStats(mu, c, e2, res)


def mu_r(nu: float, r: float, beta: float, m: int = DEFAULT_PANEL_ORDER) -> float:
    return tail_stats(float(nu), float(r), float(beta), m).mu


def c_r(nu: float, r: float, beta: float, m: int = DEFAULT_PANEL_ORDER) -> float:
    return tail_stats(float(nu), float(r), float(beta), m).c


def c_r_prime(nu: float, r: float, beta: float, m: int = DEFAULT_PANEL_ORDER) -> float:
    """d c_r / d nu = (nu / r) E phi_beta''(nu Z - mu_r)."""
    st = tail_stats(float(nu), float(r), float(beta), m)
    return nu * st.e_phi2 / r


# ---------------------------------------------------------------------------
# proximal operator of the logistic loss


def prox_logistic(x, chi, tol: float = 1e-13, maxiter: int = 100):
    """argmin_y (y - x)^2 / (2 chi) + log(1 + exp(-y)), i.e. y - chi sigma(-y) = x.

    Vectorized safeguarded Newton on the bracket ``[x, x + chi]``: a Newton
    step is replaced by bisection when it leaves the bracket or fails to halve
    the previous step, so the bracket shrinks geometrically even where Newton
    alone would oscillate between its ends.
    """
    x = np.asarray(x, dtype=float)
    chi = np.asarray(chi, dtype=float)
    if np.any(chi < 0):
        raise ValueError("chi must be nonnegative")
    x, chi = np.broadcast_arrays(x, chi)
    lo = x.copy()
    hi = x + chi
    y = x + chi * sigmoid(-x)
    y = np.clip(y, lo, hi)
    prev_step = np.full_like(y, np.inf)
    for _ in range(maxiter):
        s = sigmoid(-y)
        h = y - chi * s - x
        lo = np.where(h < 0, y, lo)
        hi = np.where(h > 0, y, hi)
        step = h / (1.0 + chi * s * (1.0 - s))
        ynew = y - step
        bad = (ynew <= lo) | (ynew >= hi) | (np.abs(step) > 0.5 * prev_step)
        ynew = np.where(bad, 0.5 * (lo + hi), ynew)
        prev_step = np.abs(ynew - y)
        done = prev_step <= tol * np.maximum(1.0, np.abs(ynew))
        y = ynew
        if np.all(done):
            break
    # final Newton polish
    s = sigmoid(-y)
    y = y - (y - chi * s - x) / (1.0 + chi * s * (1.0 - s))
    return y if y.ndim else float(y)


# ---------------------------------------------------------------------------
# the diagonal-score channel


@dataclass(frozen=True)
class ChannelMoments:
    nu: float
    chi: float
    c: float
    mu: float
    e_phi2: float
    EA: float
    EA2: float
    EB_ratio: float  # E[B / (1 + chi B)]
    EAS: float
    loss: float  # E ell(S - c)
    moreau: float  # M_r(nu, chi)


def _y_rule(nu, chi, c, m):
    y0 = float(prox_logistic(-c, chi))
    w0 = min(1.0, nu / (1.0 + 0.25 * chi))
    lo = -nu * GAUSS_CUTOFF - c
    hi = nu * GAUSS_CUTOFF - c + chi
    # where chi * B ~ 1 the slope of G(y) turns over from ~chi B / nu to 1 / nu
    turn = math.log1p(chi)
    a0 = 1.0 / (1.0 + math.exp(y0)) if y0 > -700 else 1.0
    local = nu / (1.0 + chi * a0 * (1.0 - a0))  # Gaussian width in y around G = 0
    feats = [(0.0, w0), (y0, nu), (y0, local), (-chi, w0), (turn, 1.0), (-turn, 1.0)]
    return graded_rule(lo, hi, feats, m=m)


def channel_moments(nu: float, chi: float, params: ScalarParams) -> ChannelMoments:
    """Gaussian averages of the proximal channel S = c + Prox_chi(nu G - c)."""
    if not (nu > 0 and chi > 0):
        raise ValueError("nu and chi must be positive")
    m = params.panel_order
    st = tail_stats(float(nu), params.r, params.beta, m)
    c = st.c
    rule = _y_rule(nu, chi, c, m)
    y = rule.x
    A = sigmoid(-y)
    B = A * (1.0 - A)
    g = (c + y - chi * A) / nu
    w = rule.w * np.exp(-0.5 * g * g) / SQRT_2PI * (1.0 + chi * B) / nu
    loss_y = logistic_loss(y)
    EA = float(np.dot(w, A))
    EA2 = float(np.dot(w, A * A))
    EBr = float(np.dot(w, B / (1.0 + chi * B)))
    EAS = float(np.dot(w, A * (c + y)))
    loss = float(np.dot(w, loss_y))
    moreau = 0.5 * chi * EA2 + loss
    return ChannelMoments(nu, chi, c, st.mu, st.e_phi2, EA, EA2, EBr, EAS, loss, moreau)


def moreau_M(nu: float, chi: float, params: ScalarParams) -> float:
    return channel_moments(nu, chi, params).moreau


def dM_dchi(nu: float, chi: float, params: ScalarParams) -> float:
    """Envelope derivative: -E[A^2] / 2."""
    return -0.5 * channel_moments(nu, chi, params).EA2


def moreau_M_dual(nu: float, chi: float, params: ScalarParams, iters: int = 200) -> float:
    """Dual form: sup over a(.) in [0,1] of E[a (c - nu G) - I(a) - chi a^2 / 2].

    Works directly in the G variable and maximizes pointwise by bisection on
    the logit of ``a``; it shares no code path with :func:`moreau_M`.
    """
    m = params.panel_order
    c = c_r(nu, params.r, params.beta, m)
    rule = gaussian_rule([(c / nu, 1.0 / nu), ((c - chi) / nu, 1.0 / nu)], m=m)
    b = c - nu * rule.x
    # stationarity in u = logit(a): b - u - chi sigma(u) = 0, decreasing in u
    lo = b - chi
    hi = b.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = b - mid - chi * sigmoid(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    u = 0.5 * (lo + hi)
    a = sigmoid(u)
    vals = a * b - binary_entropy_neg(a) - 0.5 * chi * a * a
    return rule.integrate(vals)


def potential(nu: float, chi: float, params: ScalarParams) -> float:
    mom = channel_moments(nu, chi, params)
    return 0.5 * params.lam * nu**2 - nu**2 / (2.0 * params.alpha * chi) + mom.moreau


def dP_dchi(nu: float, chi: float, params: ScalarParams) -> float:
    mom = channel_moments(nu, chi, params)
    return nu**2 / (2.0 * params.alpha * chi**2) - 0.5 * mom.EA2


def chi_of_nu(nu: float, params: ScalarParams) -> float:
    """Unique maximizer of chi -> P(nu, chi): root of nu^2 = alpha chi^2 E[A^2]."""
    target = 2.0 * math.log(nu) - math.log(params.alpha)

    def g(logchi):
        chi = math.exp(logchi)
        ea2 = channel_moments(nu, chi, params).EA2
        if ea2 <= 0.0:  # underflow: chi is far too large
            return 1e300
        return target - (2.0 * logchi + math.log(ea2))

    lo, hi = math.log(1e-8), 0.0
    glo, ghi = g(lo), g(hi)
    k = 0
    while glo < 0:
        hi, ghi = lo, glo
        lo -= 5.0
        glo = g(lo)
        k += 1
        if k > 40:
            raise RuntimeError("chi bracket search failed (lower end)")
    while ghi > 0:
        lo, glo = hi, ghi
        hi += 2.0
        ghi = g(hi)
        k += 1
        if k > 80:
            raise RuntimeError("chi bracket search failed (upper end)")
    root = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return math.exp(root)


def reduced_potential(nu: float, params: ScalarParams) -> tuple[float, float]:
    """V(nu) = sup_chi P(nu, chi), returned with the maximizing chi."""
    chi = chi_of_nu(nu, params)
    return potential(nu, chi, params), chi


def _stationarity(nu: float, params: ScalarParams):
    """Residual 1 - alpha chi [lam + E B/(1+chi B) + E[A] E phi'' / r] at chi(nu).

    Its sign is minus the sign of dV/dnu.
    """
    chi = chi_of_nu(nu, params)
    mom = channel_moments(nu, chi, params)
    a, r = params.alpha, params.r
    res = 1.0 - a * params.lam * chi - a * chi * mom.EB_ratio - a * chi * mom.EA * mom.e_phi2 / r
    return res, chi, mom


def dV_dnu(nu: float, params: ScalarParams) -> float:
    res, chi, _ = _stationarity(nu, params)
    return -nu * res / (params.alpha * chi)


# ---------------------------------------------------------------------------
# saddle solve


@dataclass(frozen=True)
class SaddleSolution:
    params: ScalarParams
    nu_star: float
    chi_star: float
    mu_star: float
    c_star: float
    loss: float
    residual_nu: float
    residual_chi: float
    capped: bool = False
    small_nu: bool = False
    moments: ChannelMoments | None = field(default=None, repr=False, compare=False)

    @property
    def inv_nu(self) -> float:
        return 1.0 / self.nu_star


def saddle_residuals(nu: float, chi: float, params: ScalarParams) -> tuple[float, float]:
    """Zero-residual forms of the variance and susceptibility equations.

    The variance residual is reported relative to ``max(1, E[A S])``.
    """
    mom = channel_moments(nu, chi, params)
    a, r, lam = params.alpha, params.r, params.lam
    lhs = nu**2 * (lam + mom.EA * mom.e_phi2 / r)
    res_nu = (lhs - mom.EAS) / max(1.0, abs(mom.EAS))
    res_chi = 1.0 - a * lam * chi - a * chi * mom.EB_ratio - a * chi * mom.EA * mom.e_phi2 / r
    return res_nu, res_chi


def solve_saddle(params: ScalarParams, nu_min: float = 1e-4, nu_cap: float = 1e4) -> SaddleSolution:
    """Minimize the reduced potential over nu and return the order parameters.

    The reduced potential is strictly convex, so its derivative changes sign
    once; the root is bracketed on a geometric grid and refined by Brent's
    method in ``log nu``.  When the derivative is still negative at ``nu_cap``
    (SAT blow-up at tiny ridge) the capped point is returned with ``capped``.
    """
    if not params.lam > 0:
        raise ValueError("solve_saddle needs a positive ridge")

    def f(lognu):
        return _stationarity(math.exp(lognu), params)[0]

    grid = np.linspace(math.log(nu_min), math.log(nu_cap), 25)
    prev = None
    bracket = None
    capped = False
    for ln in grid:
        val = f(ln)
        if val <= 0.0:
            bracket = (prev, ln) if prev is not None else (ln, ln)
            break
        prev = ln
    if bracket is None:
        capped = True
        lognu = grid[-1]
        warnings.warn(f"reduced potential still decreasing at nu_cap={nu_cap}", RuntimeWarning)
    elif bracket[0] == bracket[1]:
        lognu = bracket[0]
    else:
        lognu = optimize.brentq(f, bracket[0], bracket[1], xtol=1e-15, rtol=1e-15, maxiter=500)
    nu = math.exp(lognu)
    _, chi, mom = _stationarity(nu, params)
    res_nu, res_chi = saddle_residuals(nu, chi, params)
    return SaddleSolution(
        params=params,
        nu_star=nu,
        chi_star=chi,
        mu_star=mom.mu,
        c_star=mom.c,
        loss=mom.loss,
        residual_nu=res_nu,
        residual_chi=res_chi,
        capped=capped,
        small_nu=nu < 1e-3,
        moments=mom,
    )


# ---------------------------------------------------------------------------
# predicted laws


@dataclass(frozen=True)
class ChannelLaws:
    """Limiting laws of scores, margins and percentiles at fixed (nu, chi, c).

    The channel ``G -> S`` is increasing, so ``P(S <= s) = Phi(G(s))`` with the
    explicit inverse ``G(s) = (s - chi sigma(c - s)) / nu``.
    """

    nu: float
    chi: float
    c: float

    def score_cdf(self, s):
        s = np.asarray(s, dtype=float)
        return normal_cdf((s - self.chi * sigmoid(self.c - s)) / self.nu)

    def score_quantile(self, p):
        g = normal_quantile(p)
        return self.c + prox_logistic(self.nu * np.asarray(g) - self.c, self.chi)

    def margin_cdf(self, t):
        return self.score_cdf(self.c + np.asarray(t, dtype=float))

    def normalized_margin_cdf(self, t):
        """CDF of (S - c) / nu."""
        return self.score_cdf(self.c + self.nu * np.asarray(t, dtype=float))

    def percentile_cdf(self, omega):
        """CDF of Phi(S / nu)."""
        omega = np.asarray(omega, dtype=float)
        out = np.zeros_like(omega)
        inside = (omega > 0) & (omega < 1)
        out[inside] = self.score_cdf(self.nu * normal_quantile(omega[inside]))
        out[omega >= 1] = 1.0
        return out if out.ndim else float(out)

    def sample_scores(self, size: int, rng: np.random.Generator):
        g = rng.standard_normal(size)
        return self.c + prox_logistic(self.nu * g - self.c, self.chi)


def channel_cdfs(sol: SaddleSolution) -> ChannelLaws:
    return ChannelLaws(sol.nu_star, sol.chi_star, sol.c_star)


def predicted_loss(sol: SaddleSolution) -> float:
    return sol.loss
