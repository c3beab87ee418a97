"""Tail-average-margin retrieval in linear associative memories.

Modules
-------
ensemble    Gaussian instances, score matrices and seeded streams.
cmm         Correlation matrix memory retrieval, thresholds and percentiles.
objective   The smoothed TAM objective, its derivatives and streaming evaluators.
solver      L-BFGS minimizers for the TAM and cross-entropy objectives.
scalar      The two-parameter scalar theory and its saddle point.
phase       Ridgeless phase boundary and limiting SAT/UNSAT profiles.
sweeps      Reproducible sweep experiments behind the command-line tool.
"""

from .cmm import build_cmm, percentile_cdf_theory, threshold_scan, top1_holds
from .ensemble import Instance, derive_seed, sample_instance, score_matrix
from .objective import TamConfig
from .phase import alpha_c, classify_phase, rho_alpha, sat_profiles, unsat_ridgeless
from .scalar import ScalarParams, channel_cdfs, kappa_r, prox_logistic, solve_saddle
from .solver import SolveOptions, minimize_ce, minimize_tam

__version__ = "0.1.0"

__all__ = [
    "Instance", "ScalarParams", "SolveOptions", "TamConfig", "alpha_c", "build_cmm",
    "channel_cdfs", "classify_phase", "derive_seed", "kappa_r", "minimize_ce", "minimize_tam",
    "percentile_cdf_theory", "prox_logistic", "rho_alpha", "sample_instance", "sat_profiles",
    "score_matrix", "solve_saddle", "threshold_scan", "top1_holds", "unsat_ridgeless",
]
