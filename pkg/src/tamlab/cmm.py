"""Correlation matrix memory ``W = U V^T``: retrieval, thresholds and percentiles.

Top-1 retrieval holds when every diagonal score strictly beats all
competitors in its column.  For the correlation memory the transition sits
at ``d^2 / (n log n) = 8``; :func:`threshold_scan` measures it by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import derive_seed, make_rng, sample_instance
from .special import normal_cdf, normal_quantile

WILSON_Z = 1.959963984540054


def build_cmm(inst) -> np.ndarray:
    return inst.U @ inst.V.T


def cmm_scores(inst) -> np.ndarray:
    """Score matrix of the correlation memory, computed as (U^T U)(V^T V)."""
    return (inst.U.T @ inst.U) @ (inst.V.T @ inst.V)


def top1_holds(S) -> bool:
    """True iff s_ii > s_ji strictly for every column i and every j != i."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError("score matrix must be square")
    if n == 1:
        return True
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    return bool(np.all(np.diagonal(S) > off.max(axis=0)))


def percentile_samples(S) -> np.ndarray:
    """Omega_i = #{j != i : s_ji <= s_ii} / (n - 1)."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or n < 2:
        raise ValueError("need a square score matrix with n >= 2")
    diag = np.diagonal(S)
    counts = np.count_nonzero(S <= diag[None, :], axis=0) - 1
    return counts / (n - 1)


def percentile_cdf_theory(alpha, omega):
    """F_alpha(omega) = Phi(Phi^{-1}(omega) - alpha^{-1/2}) on [0, 1], with F(0)=0, F(1)=1."""
    if not np.all(np.asarray(alpha) > 0):
        raise ValueError("alpha must be positive")
    omega = np.asarray(omega, dtype=float)
    if np.any((omega < 0) | (omega > 1)) or np.any(np.isnan(omega)):
        raise ValueError("omega must lie in [0, 1]")
    inner = np.clip(omega, 0.5 * np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    out = normal_cdf(normal_quantile(inner) - 1.0 / np.sqrt(alpha))
    out = np.where(omega <= 0, 0.0, np.where(omega >= 1, 1.0, out))
    return out if out.ndim else float(out)


def percentile_pdf_theory(alpha, omega):
    """f_alpha(omega) = exp(Phi^{-1}(omega) / sqrt(alpha) - 1 / (2 alpha))."""
    if not np.all(np.asarray(alpha) > 0):
        raise ValueError("alpha must be positive")
    return np.exp(normal_quantile(omega) / np.sqrt(alpha) - 0.5 / alpha)


@dataclass(frozen=True)
class RetrievalEstimate:
    trials: int
    successes: int

    @property
    def p_hat(self) -> float:
        return self.successes / self.trials

    @property
    def stderr(self) -> float:
        p = self.p_hat
        return math.sqrt(max(p * (1 - p), 0.25 / self.trials) / self.trials)

    @property
    def wilson_ci(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.trials)


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    p = successes / trials
    z2 = z * z
    den = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials**2)) / den
    return max(0.0, center - half), min(1.0, center + half)


def retrieval_trial(d: int, n: int, seed: int) -> bool:
    inst = sample_instance(d, n, seed)
    return top1_holds(cmm_scores(inst))


def retrieval_probability(d: int, n: int, trials: int, seed: int) -> RetrievalEstimate:
    """Monte-Carlo estimate of P(top-1 retrieval) for the correlation memory."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    hits = sum(retrieval_trial(d, n, derive_seed(seed, t)) for t in range(trials))
    return RetrievalEstimate(trials, hits)


def dim_for_rho(rho: float, n: int) -> int:
    """Nearest integer d (at least 2) with d^2 = rho n log n."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return max(2, int(round(math.sqrt(rho * n * math.log(n)))))


@dataclass(frozen=True)
class ScanPoint:
    rho: float
    rho_realized: float
    d: int
    n: int
    estimate: RetrievalEstimate


def scan_point(n: int, index: int, rho: float, trials: int, seed: int) -> ScanPoint:
    """One grid point of :func:`threshold_scan`; its stream is ``(seed, index)``."""
    d = dim_for_rho(rho, n)
    est = retrieval_probability(d, n, trials, derive_seed(seed, index))
    return ScanPoint(float(rho), d * d / (n * math.log(n)), d, n, est)


def threshold_scan(n: int, rho_list, trials: int, seed: int) -> list[ScanPoint]:
    """Estimate P(top-1) on a grid of rho = d^2 / (n log n) at fixed n."""
    if n < 3:
        raise ValueError("need n >= 3")
    return [scan_point(n, a, rho, trials, seed) for a, rho in enumerate(rho_list)]


@dataclass(frozen=True)
class SingleCoordinateDraw:
    theta: float
    xi: np.ndarray


def single_coordinate_sample(d: int, n: int, rng) -> SingleCoordinateDraw:
    """Exact law of the first score column of the correlation memory in O(n).

    ``rng`` may be a ``numpy.random.Generator`` or an integer seed.
    """
    if n < 3 or d < 2:
        raise ValueError("need n >= 3 and d >= 2")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    sd, sn = math.sqrt(d), math.sqrt(n)
    rho1 = math.sqrt(rng.chisquare(d)) / sd
    rho2 = math.sqrt(rng.chisquare(d)) / sd
    rho3 = math.sqrt(rng.chisquare(n - 1)) / sn
    rho4 = math.sqrt(rng.chisquare(d - 1)) / sd
    rho5 = math.sqrt(rng.chisquare(n - 2)) / sn
    a = rng.standard_normal()
    g = rng.standard_normal(n - 1)
    s = rho1 * rho2 + math.sqrt(n) / d * rho3 * a
    scale = math.sqrt(
        (a * s / sn + rho3 * rho4**2) ** 2 / d
        + s**2 * rho5**2 / d
        + n / d**2 * rho3**2 * rho4**2 * rho5**2
    )
    xi = rho1 * scale / (np.linalg.norm(g) / sn) * g
    return SingleCoordinateDraw(rho1 * rho2 * s, xi)


def single_coordinate_failure_rate(d: int, n: int, draws: int, seed: int) -> float:
    """Frequency of theta <= max(xi) under the single-coordinate law."""
    rng = make_rng(seed)
    fails = 0
    for _ in range(draws):
        dr = single_coordinate_sample(d, n, rng)
        fails += dr.theta <= dr.xi.max()
    return fails / draws
