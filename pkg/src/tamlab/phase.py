"""Ridgeless phase boundary, limiting SAT/UNSAT profiles and the top-1 extrapolation.

In the ridgeless limit the scalar theory separates loads ``alpha = n / d^2``
into a SAT phase, where every diagonal score clears the TAM threshold and the
norm diverges, and an UNSAT phase with a bounded minimizer and positive loss.
The boundary only involves the Gaussian tail mean ``kappa_r`` and does not
depend on the smoothing ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .scalar import ChannelLaws, SaddleSolution, ScalarParams, channel_cdfs, kappa_r, solve_saddle
from .special import normal_cdf, normal_pdf

BOUNDARY_BAND = 1e-9
UNSAT_LADDER = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
UNSAT_STABILITY = 1e-3
# limiting constant in d^2 = C n log n for top-1 feasibility
TOP1_CONSTANT = 2.0


def tail_second_moment(kappa):
    """E[(kappa - G)_+^2] = (1 + kappa^2) Phi(kappa) + kappa phi(kappa)."""
    k = np.asarray(kappa, dtype=float)
    out = (1.0 + k * k) * normal_cdf(k) + k * normal_pdf(k)
    return out if out.ndim else float(out)


def alpha_c(r: float) -> float:
    """Critical load 1 / E[(kappa_r - G)_+^2]; the limit r -> 1 gives 2."""
    if r == 1.0:
        return 2.0
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1], got {r}")
    return 1.0 / tail_second_moment(kappa_r(r))


def rho_alpha(alpha: float, r: float) -> float:
    """Root rho > kappa_r of E[(rho - G)_+^2] = 1 / alpha (SAT loads only)."""
    ac = alpha_c(r)
    if not 0 < alpha < ac:
        raise ValueError(f"rho_alpha needs 0 < alpha < alpha_c(r) = {ac:.6g}, got {alpha}")
    kap = kappa_r(r)
    target = 1.0 / alpha

    def f(rho):
        return tail_second_moment(rho) - target

    hi = kap + 1.0
    while f(hi) < 0:
        hi = kap + 2.0 * (hi - kap)
    return optimize.brentq(f, kap, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


@dataclass(frozen=True)
class SatProfiles:
    """Limiting normalized margin max{G, rho} - kappa and signal percentile laws."""

    alpha: float
    r: float
    rho: float
    kappa: float

    @property
    def p_alpha(self) -> float:
        return float(normal_cdf(self.rho))

    def margin_cdf(self, t):
        t = np.asarray(t, dtype=float)
        # compare against the atom in t-space so that samples rho - kappa land on it
        out = np.where(t < self.rho - self.kappa, 0.0, normal_cdf(t + self.kappa))
        return out if out.ndim else float(out)

    def percentile_cdf(self, omega):
        """Atom of mass p_alpha at omega = p_alpha, uniform above."""
        w = np.asarray(omega, dtype=float)
        out = np.where(w < self.p_alpha, 0.0, np.clip(w, 0.0, 1.0))
        return out if out.ndim else float(out)

    def sample_margins(self, size: int, rng: np.random.Generator):
        return np.maximum(rng.standard_normal(size), self.rho) - self.kappa


def sat_profiles(alpha: float, r: float) -> SatProfiles:
    return SatProfiles(alpha, r, rho_alpha(alpha, r), kappa_r(r))


@dataclass(frozen=True)
class UnsatProfile:
    alpha: float
    r: float
    beta: float
    nu0: float
    chi0: float
    c0: float
    loss: float
    laws: ChannelLaws
    trace: tuple = field(default=(), repr=False)  # (lam, SaddleSolution) pairs


def unsat_ridgeless(alpha: float, r: float, beta: float,
                    ladder=UNSAT_LADDER, tol: float = UNSAT_STABILITY) -> UnsatProfile:
    """Ridgeless UNSAT minimizer as the limit of ridge solutions along ``ladder``.

    Raises ``RuntimeError`` carrying the nu-trace when the last two rungs differ
    by more than ``tol`` relative.
    """
    ac = alpha_c(r)
    if not alpha > ac:
        raise ValueError(f"unsat_ridgeless needs alpha > alpha_c(r) = {ac:.6g}, got {alpha}")
    trace = []
    for lam in ladder:
        sol = solve_saddle(ScalarParams(alpha, r, beta, lam))
        trace.append((lam, sol))
    nus = [s.nu_star for _, s in trace]
    if len(nus) >= 2 and abs(nus[-1] - nus[-2]) > tol * abs(nus[-1]):
        raise RuntimeError(f"nu did not stabilize along the ridge ladder: {list(zip(ladder, nus))}")
    last: SaddleSolution = trace[-1][1]
    return UnsatProfile(alpha, r, beta, last.nu_star, last.chi_star, last.c_star, last.loss,
                        channel_cdfs(last), tuple(trace))


def smalltail_threshold(n: float) -> float:
    """Conjectured top-1 feasibility threshold d^2 = 2 n log n."""
    if not n >= 3:
        raise ValueError(f"n must be at least 3, got {n}")
    return TOP1_CONSTANT * n * math.log(n)


@dataclass(frozen=True)
class PhasePoint:
    alpha: float
    r: float
    phase: str
    alpha_c: float
    rho_alpha: float | None = None
    p_alpha: float | None = None


def classify_phase(alpha: float, r: float, band: float = BOUNDARY_BAND) -> PhasePoint:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    ac = alpha_c(r)
    if abs(alpha - ac) <= band:
        return PhasePoint(alpha, r, "BOUNDARY", ac)
    if alpha < ac:
        rho = rho_alpha(alpha, r)
        return PhasePoint(alpha, r, "SAT", ac, rho, float(normal_cdf(rho)))
    return PhasePoint(alpha, r, "UNSAT", ac)
