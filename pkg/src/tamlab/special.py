"""Gaussian special functions, stable logistic primitives and quadrature rules.

Every expectation over a standard normal variable in the package goes through
this module.  Two rules are provided:

* ``gauss_hermite_expectation`` -- plain probabilists' Gauss-Hermite, fine for
  entire integrands of moderate growth.
* ``graded_rule`` -- composite Gauss-Legendre with panels graded geometrically
  around user supplied features ``(center, width)``.  Integrands built from
  ``sigmoid(beta * t)`` with ``beta`` in the tens have complex poles within
  ``pi / beta`` of the real axis, which Gauss-Hermite cannot resolve at any
  practical node count; the graded rule converges to round-off for those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special as sps

SQRT_2PI = math.sqrt(2.0 * math.pi)
LOG2 = math.log(2.0)

# Gaussian tail beyond this many standard deviations is below 1e-32.
GAUSS_CUTOFF = 12.0


# ---------------------------------------------------------------------------
# normal distribution


def normal_cdf(x):
    return sps.ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return out if out.ndim else float(out)


def normal_quantile(p):
    """Inverse standard normal CDF, polished by one Halley step."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
        raise ValueError("normal_quantile requires 0 < p < 1")
    x = sps.ndtri(p)
    # Halley correction on Phi(x) - p; the residual is formed in the tail that
    # carries the significant digits.
    upper = x > 0
    resid = np.where(upper, sps.ndtr(-x) - (1.0 - p), sps.ndtr(x) - p)
    resid = np.where(upper, -resid, resid)
    dens = np.exp(-0.5 * x * x) / SQRT_2PI
    t = resid / dens
    x = x - t / (1.0 + 0.5 * x * t)
    return x if x.ndim else float(x)


# ---------------------------------------------------------------------------
# stable logistic primitives


def sigmoid(t):
    return sps.expit(t)


def softplus(t):
    """log(1 + exp(t)) without overflow."""
    t = np.asarray(t, dtype=float)
    out = np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return out if out.ndim else float(out)


def logistic_loss(t):
    """ell(t) = log(1 + exp(-t))."""
    return softplus(-np.asarray(t, dtype=float))


def smooth_plus(t, beta):
    """phi_beta(t) = softplus(beta t) / beta."""
    return softplus(beta * np.asarray(t, dtype=float)) / beta


def smooth_plus_d2(t, beta):
    """Second derivative of phi_beta: beta * sigma(beta t) * (1 - sigma(beta t))."""
    q = sps.expit(beta * np.asarray(t, dtype=float))
    return beta * q * (1.0 - q)


def binary_entropy_neg(a):
    """I(a) = a log a + (1 - a) log(1 - a), with 0 log 0 = 0."""
    a = np.asarray(a, dtype=float)
    return sps.xlogy(a, a) + sps.xlogy(1.0 - a, 1.0 - a)


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=None)
def _hermite_e(nodes: int):
    z, w = sps.roots_hermitenorm(nodes)
    return z, w / SQRT_2PI


def gauss_hermite_expectation(f, nodes: int = 201) -> float:
    """E[f(Z)] for Z ~ N(0, 1) by probabilists' Gauss-Hermite quadrature.

    ``f`` must accept an array of nodes.
    """
    if nodes < 2:
        raise ValueError("need at least two nodes")
    z, w = _hermite_e(nodes)
    return float(np.dot(w, f(z)))


@lru_cache(maxsize=None)
def _legendre(m: int):
    return np.polynomial.legendre.leggauss(m)


@dataclass(frozen=True)
class Rule:
    """Nodes and weights for the integral over the real line (Lebesgue measure)."""

    x: np.ndarray
    w: np.ndarray

    def integrate(self, values) -> float:
        return float(np.dot(self.w, values))


def graded_breakpoints(lo: float, hi: float, features, ratio: float = 2.0,
                       base_step: float | None = None) -> np.ndarray:
    """Breakpoints on [lo, hi] refined geometrically towards each feature.

    Around a feature ``(c, w)`` the breakpoints are ``c +- w * ratio**k`` for
    ``k = -2, -1, 0, ...``, so a panel never exceeds its distance to the
    feature center by more than the grading ratio.
    """
    pts = [lo, hi]
    if base_step is not None and base_step > 0:
        k = max(1, int(math.ceil((hi - lo) / base_step)))
        pts.extend(np.linspace(lo, hi, k + 1))
    span = hi - lo
    for c, w in features:
        if not (np.isfinite(c) and np.isfinite(w)) or w <= 0:
            continue
        c = min(max(c, lo), hi)
        pts.append(c)
        off = w / ratio**2
        while off < span:
            pts.append(c - off)
            pts.append(c + off)
            off *= ratio
    pts = np.clip(np.asarray(pts, dtype=float), lo, hi)
    pts = np.unique(pts)
    # drop slivers produced by overlapping gradings
    keep = np.concatenate(([True], np.diff(pts) > 1e-13 * np.maximum(1.0, np.abs(pts[1:]))))
    pts = pts[keep]
    if pts[-1] < hi:
        pts = np.append(pts, hi)
    return pts


def composite_rule(breaks: np.ndarray, m: int = 16) -> Rule:
    t, w = _legendre(m)
    a = breaks[:-1, None]
    b = breaks[1:, None]
    half = 0.5 * (b - a)
    x = (a + b) * 0.5 + half * t[None, :]
    ww = half * w[None, :]
    return Rule(x.ravel(), ww.ravel())


def graded_rule(lo: float, hi: float, features, m: int = 16) -> Rule:
    return composite_rule(graded_breakpoints(lo, hi, features), m)


def gaussian_rule(features=(), m: int = 16, cutoff: float = GAUSS_CUTOFF) -> Rule:
    """Rule whose weights already include the standard normal density.

    ``rule.integrate(f(rule.x))`` approximates E[f(Z)].  The unit-scale Gaussian
    itself is always registered as a feature.
    """
    feats = [(0.0, 1.0), *features]
    base = graded_rule(-cutoff, cutoff, feats, m)
    return Rule(base.x, base.w * np.exp(-0.5 * base.x**2) / SQRT_2PI)
