"""Exact arithmetic on distributions supported on a uniform grid over [0, 1].

A :class:`GridDist` with ``M`` support points places mass on
``{0, 1/(M-1), ..., 1}``. The dominating measure is the counting measure on
the grid, so every integral below is a finite sum.

The array-level helpers (``td``, ``hellinger2``, ``means``, ``variances``)
accept stacked mass arrays whose last axis is the grid; the agents use them
on whole function classes at once.
"""
from __future__ import annotations

import math

import numpy as np

MASS_TOL = 1e-12
INEQ_SLACK = 1e-9


class GridMismatchError(ValueError):
    pass


class GridDist:
    """Immutable probability vector on a uniform grid of ``M >= 2`` points."""

    __slots__ = ("_masses",)

    def __init__(self, masses):
        m = np.array(masses, dtype=float)
        if m.ndim != 1 or m.shape[0] < 2:
            raise ValueError("GridDist needs a 1-d mass vector with at least 2 points")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("masses must be finite and nonnegative")
        total = m.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, not 1")
        m = m / total
        m.setflags(write=False)
        self._masses = m

    @classmethod
    def point(cls, grid_size: int, index: int) -> "GridDist":
        m = np.zeros(grid_size)
        m[index] = 1.0
        return cls(m)

    @classmethod
    def from_points(cls, grid_size: int, points: dict) -> "GridDist":
        """Build from ``{grid value: mass}``; values must sit on the grid."""
        m = np.zeros(grid_size)
        for z, p in points.items():
            m[value_to_index(z, grid_size)] += p
        return cls(m)

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def grid_size(self) -> int:
        return self._masses.shape[0]

    @property
    def support(self) -> np.ndarray:
        return grid(self.grid_size)

    def __eq__(self, other):
        if not isinstance(other, GridDist):
            return NotImplemented
        return self.grid_size == other.grid_size and np.array_equal(self._masses, other._masses)

    def __hash__(self):
        return hash(self._masses.tobytes())

    def allclose(self, other: "GridDist", atol: float = 1e-12) -> bool:
        _check_grid(self, other)
        return bool(np.allclose(self._masses, other._masses, rtol=0.0, atol=atol))

    def __repr__(self):
        nz = {round(float(z), 12): round(float(p), 12)
              for z, p in zip(self.support, self._masses) if p > 0}
        return f"GridDist(M={self.grid_size}, {nz})"


def grid(grid_size: int) -> np.ndarray:
    return np.arange(grid_size) / (grid_size - 1)


def value_to_index(z: float, grid_size: int) -> int:
    pos = z * (grid_size - 1)
    idx = int(round(pos))
    if abs(pos - idx) > 1e-9 or not 0 <= idx < grid_size:
        raise ValueError(f"{z!r} is not a point of the {grid_size}-point grid")
    return idx


def argmin_tol(values: np.ndarray, axis: int = -1, tol: float = 1e-12) -> np.ndarray:
    """Lowest index attaining the minimum, treating values within ``tol`` as tied."""
    values = np.asarray(values, dtype=float)
    lo = values.min(axis=axis, keepdims=True)
    return np.argmax(values <= lo + tol, axis=axis)


def _check_grid(f: GridDist, g: GridDist) -> None:
    if f.grid_size != g.grid_size:
        raise GridMismatchError(f"grid sizes differ: {f.grid_size} vs {g.grid_size}")


# -- array-level kernels (last axis is the grid) ---------------------------

def means(masses: np.ndarray) -> np.ndarray:
    masses = np.asarray(masses, dtype=float)
    return masses @ grid(masses.shape[-1])


def variances(masses: np.ndarray) -> np.ndarray:
    masses = np.asarray(masses, dtype=float)
    z = grid(masses.shape[-1])
    mu = masses @ z
    return np.einsum("...m,...m->...", masses, (z - mu[..., None]) ** 2)


def td(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Triangular discrimination along the last axis, with 0/0 := 0."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    s = f + g
    d = f - g
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(s > 0, d * d / np.where(s > 0, s, 1.0), 0.0)
    return terms.sum(axis=-1)


def hellinger2(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    return 0.5 * ((np.sqrt(f) - np.sqrt(g)) ** 2).sum(axis=-1)


def shift_clamped(masses: np.ndarray, c: int) -> tuple[np.ndarray, bool]:
    """Law of ``c/(M-1) + Y`` for ``Y ~ masses``; overflow piles onto the top point."""
    M = masses.shape[-1]
    out = np.zeros_like(masses)
    if c == 0:
        out[...] = masses
        return out, False
    out[..., c:] = masses[..., : M - c]
    spill = masses[..., M - c:].sum(axis=-1)
    out[..., M - 1] += spill
    return out, bool(np.any(spill > 0))


def convolve_arrays(f: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, bool]:
    M = f.shape[-1]
    full = np.convolve(f, g)
    out = full[:M].copy()
    spill = full[M:].sum()
    out[M - 1] += spill
    return out, bool(spill > 0)


# -- GridDist API -----------------------------------------------------------

def mean(d: GridDist) -> float:
    return float(means(d.masses))


def variance(d: GridDist) -> float:
    return float(variances(d.masses))


def triangular_discrimination(f: GridDist, g: GridDist) -> float:
    _check_grid(f, g)
    return float(td(f.masses, g.masses))


def hellinger_sq(f: GridDist, g: GridDist) -> float:
    _check_grid(f, g)
    return float(hellinger2(f.masses, g.masses))


def convolve_clamped(f: GridDist, g: GridDist) -> tuple[GridDist, bool]:
    """Law of ``X + Y`` for independent ``X ~ f``, ``Y ~ g``.

    Mass landing above 1 is accumulated at the top grid point and the second
    return value reports whether that happened.
    """
    _check_grid(f, g)
    out, clamped = convolve_arrays(f.masses, g.masses)
    return GridDist(out), clamped


def mixture(weights, dists) -> GridDist:
    weights = np.asarray(weights, dtype=float)
    dists = list(dists)
    if weights.ndim != 1 or len(weights) != len(dists) or not dists:
        raise ValueError("weights and dists must be nonempty and the same length")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > MASS_TOL:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    M = dists[0].grid_size
    for d in dists[1:]:
        _check_grid(dists[0], d)
    stacked = np.stack([d.masses for d in dists])
    out = weights @ stacked
    assert out.shape == (M,)
    return GridDist(out / out.sum())


# -- executable inequalities -------------------------------------------------
# Each returns the slack ``rhs - lhs``; a check passes when slack >= -INEQ_SLACK.

def mean_gap_two_variance_slack(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """|mean f - mean g| <= 2 sqrt((Var f + Var g) D(f||g)), required D <= 1/2.

    Pairs with D > 1/2 get slack +inf (the premise fails).
    """
    D = td(f, g)
    lhs = np.abs(means(f) - means(g))
    rhs = 2.0 * np.sqrt((variances(f) + variances(g)) * D)
    return np.where(D <= 0.5, rhs - lhs, np.inf)


def mean_gap_one_variance_slack(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """|mean f - mean g| <= 4 sqrt(Var f * D(f||g)) + 5 D(f||g)."""
    D = td(f, g)
    lhs = np.abs(means(f) - means(g))
    return 4.0 * np.sqrt(variances(f) * D) + 5.0 * D - lhs


def variance_gap_slack(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """|Var f - Var g| <= 4 sqrt((Var f + D(f||g)) D(f||g))."""
    D = td(f, g)
    vf = variances(f)
    lhs = np.abs(vf - variances(g))
    return 4.0 * np.sqrt((vf + D) * D) - lhs


def hellinger_sandwich_slack(f: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slacks of ``2 H^2 <= D`` and ``D <= 4 H^2``."""
    D = td(f, g)
    h2 = hellinger2(f, g)
    return D - 2.0 * h2, 4.0 * h2 - D


def lstar_slack(played_mean: float, best_mean: float, delta: float) -> float:
    """mean C(x,a_k) - min_a mean C(x,a) <= 3 sqrt(min_a mean C * delta) + 6 delta."""
    return 3.0 * math.sqrt(max(best_mean, 0.0) * delta) + 6.0 * delta - (played_mean - best_mean)
