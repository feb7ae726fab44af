"""Exhaustive l1-distributional eluder dimension for tiny instances.

A sequence ``d_1, ..., d_L`` is admissible at scale ``eps >= eps0`` when for
every ``t`` some ``f`` has ``|E_{d_t} f| > eps`` while
``sum_{i<t} |E_{d_i} f| <= eps``. Once the witnesses are fixed, the set of
scales that work is an interval ``[lo, hi)`` with

    lo = max(eps0, prefix sums of the witnesses),  hi = min_t |E_{d_t} f_t|,

so the search tracks that interval instead of enumerating candidate scales.
Note that the binding lower end can be a partial sum, which is why scanning
only the realized values ``|E_d f|`` would miss admissible sequences.

A witness can never be reused (its earlier term already exceeds ``eps``), so
sequences are no longer than ``|Psi|``. The search state is the multiset of
chosen distributions plus the interval, which is memoized.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dist import td
from .env import Policy, TabularMDP, bellman_arrays, occupancy
from .func_class import FiniteClass, next_state_values

MAX_DISTRIBUTIONS = 12
GAP_TOL = 1e-12


class EluderGuardError(ValueError):
    """The instance is too large for exhaustive search."""


@dataclass(frozen=True)
class EluderInstance:
    """``values[j, s]`` is the ``j``-th function at point ``s``; ``dists[i]`` a distribution over points."""

    values: np.ndarray
    dists: np.ndarray
    epsilon0: float

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        d = np.atleast_2d(np.asarray(self.dists, dtype=float))
        if v.shape[1] != d.shape[1]:
            raise ValueError("functions and distributions live on different point sets")
        if not np.all(np.isfinite(v)):
            raise ValueError("function values must be finite")
        if np.any(d < 0) or np.any(np.abs(d.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each distribution must sum to 1")
        if not self.epsilon0 > 0:
            raise ValueError("epsilon0 must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dists", d)


@dataclass(frozen=True)
class EluderResult:
    dimension: int
    sequence: tuple  # (distribution index, witness index) pairs
    epsilon: float


def eluder_dim(inst: EluderInstance, max_dists: int = MAX_DISTRIBUTIONS) -> EluderResult:
    """Exact length of the longest admissible sequence, with one witnessing sequence."""
    nd = inst.dists.shape[0]
    if nd > max_dists:
        raise EluderGuardError(f"{nd} distributions exceed the exhaustive-search limit of {max_dists}")
    absE = np.abs(inst.dists @ inst.values.T)  # (n_dists, n_funcs)
    nf = absE.shape[1]
    eps0 = float(inst.epsilon0)

    @lru_cache(maxsize=None)
    def best(counts: tuple, lo: float, hi: float) -> tuple:
        prefix = np.asarray(counts, dtype=float) @ absE  # per-function running sums
        out: tuple = ()
        for i in range(nd):
            for j in range(nf):
                new_lo = max(lo, prefix[j])
                new_hi = min(hi, absE[i, j])
                if new_hi - new_lo <= GAP_TOL:
                    continue
                nxt = list(counts)
                nxt[i] += 1
                tail = best(tuple(nxt), float(new_lo), float(new_hi))
                cand = ((i, j, new_lo),) + tail
                if len(cand) > len(out):
                    out = cand
                    if len(out) == nf:
                        return out
        return out

    seq = best((0,) * nd, eps0, np.inf)
    eps = max((s[2] for s in seq), default=eps0)
    return EluderResult(len(seq), tuple((i, j) for i, j, _ in seq), float(eps))


def default_epsilon0(K: int) -> float:
    """The threshold used when none is given: ``1/K``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return 1.0 / K


def build_cb_instance(cls: FiniteClass, cost: np.ndarray, epsilon0: float | None = None,
                      K: int | None = None) -> EluderInstance:
    """Points are ``(x, a)`` pairs, functions ``D(f(x,a) || C(x,a))``, distributions point masses."""
    if cls.horizon != 1:
        raise ValueError("needs a single-step class")
    if epsilon0 is None:
        if K is None:
            raise ValueError("give epsilon0 or K")
        epsilon0 = default_epsilon0(K)
    C = np.asarray(getattr(cost, "C", cost), dtype=float)
    vals = td(cls.stack(0), C[None]).reshape(cls.size(), -1)
    n_pts = vals.shape[1]
    return EluderInstance(vals, np.eye(n_pts), epsilon0)


def _bellman_residuals(cls: FiniteClass, mdp: TabularMDP, h: int) -> np.ndarray:
    """``D(f_h || T*_h f_{h+1})`` over all ``(f_h, f_{h+1})`` pairs, shape ``(n, S, A)``."""
    H = cls.horizon
    rows = []
    nexts = [None] if h == H - 1 else list(cls.stack(h + 1))
    for f_next in nexts:
        img = bellman_arrays(mdp, h, next_state_values(f_next, "star", h + 1))
        rows.append(td(cls.stack(h), img[None]))
    return np.concatenate(rows)


def build_rl_instance(cls: FiniteClass, mdp: TabularMDP, policies: list[Policy], h: int, mode: str = "Q",
                      epsilon0: float | None = None, K: int | None = None, x1=None) -> EluderInstance:
    """Step-``h`` instance: Bellman residual functions against occupancy distributions.

    ``mode="Q"`` works over ``(x, a)``; ``mode="V"`` over states, averaging the
    residual over a uniform action.
    """
    if epsilon0 is None:
        if K is None:
            raise ValueError("give epsilon0 or K")
        epsilon0 = default_epsilon0(K)
    res = _bellman_residuals(cls, mdp, h)
    occ = np.stack([occupancy(mdp, pi, x1)[h] for pi in policies])
    if mode == "Q":
        return EluderInstance(res.reshape(res.shape[0], -1), occ.reshape(occ.shape[0], -1), epsilon0)
    if mode == "V":
        return EluderInstance(res.mean(axis=2), occ.sum(axis=2), epsilon0)
    raise ValueError(f"unknown mode {mode!r}")


def rl_eluder_dim(cls: FiniteClass, mdp: TabularMDP, policies: list[Policy], mode: str = "Q",
                  epsilon0: float | None = None, K: int | None = None, x1=None) -> int:
    """``max_h`` of the per-step dimensions."""
    return max(eluder_dim(build_rl_instance(cls, mdp, policies, h, mode, epsilon0, K, x1)).dimension
               for h in range(cls.horizon))
