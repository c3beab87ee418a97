"""Isotropic Gaussian instances and score matrices.

Keys ``v_i`` and targets ``u_i`` are i.i.d. ``N(0, I_d / d)`` so that every
column has unit expected squared norm.  A memory ``W`` scores target ``j``
against key ``i`` by ``s_{j,i} = u_j^T W v_i``.

Randomness
----------
All variates come from numpy's ``PCG64`` bit generator with the default
ziggurat normal transform.  Sweep point ``(i, j, ...)`` of a run with master
seed ``m`` draws from ``derive_seed(m, i, j, ...)``, a pure function built on
``SeedSequence`` spawn keys, so results never depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def derive_seed(master: int, *indices: int) -> int:
    """64-bit child seed for grid coordinates ``indices`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(i) for i in indices))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class Instance:
    """A sampled problem: ``U`` (targets) and ``V`` (keys), both ``d x n``."""

    d: int
    n: int
    U: np.ndarray
    V: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.U.shape != (self.d, self.n) or self.V.shape != (self.d, self.n):
            raise ValueError(f"U and V must be {self.d}x{self.n}, got {self.U.shape} and {self.V.shape}")

    @property
    def alpha(self) -> float:
        return self.n / self.d**2


def sample_instance(d: int, n: int, seed: int) -> Instance:
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    rng = make_rng(seed)
    scale = 1.0 / np.sqrt(d)
    U = np.asfortranarray(rng.standard_normal((d, n)) * scale)
    V = np.asfortranarray(rng.standard_normal((d, n)) * scale)
    for a in (U, V):
        a.setflags(write=False)
    return Instance(d, n, U, V, seed)


def _check_w(W, inst):
    if W.shape != (inst.d, inst.d):
        raise ValueError(f"W must be {inst.d}x{inst.d}, got {W.shape}")


def score_matrix(W: np.ndarray, inst: Instance) -> np.ndarray:
    """S = U^T W V; column ``i`` holds the scores of every target against key ``i``."""
    W = np.asarray(W, dtype=float)
    _check_w(W, inst)
    return inst.U.T @ (W @ inst.V)


def score_column(W: np.ndarray, inst: Instance, i: int) -> np.ndarray:
    """Column ``i`` (0-based) of the score matrix without forming the rest."""
    W = np.asarray(W, dtype=float)
    _check_w(W, inst)
    if not 0 <= i < inst.n:
        raise IndexError(f"column {i} out of range for n={inst.n}")
    return inst.U.T @ (W @ inst.V[:, i])
