"""Finite conditional-distribution classes and MLE confidence sets.

Members are tables ``(x, a) -> GridDist`` stored as ``(S, A, M)`` mass
arrays. States, actions, steps and costs are all integer indices: a cost ``c``
is the grid index of the observed value ``c / (M - 1)``, and steps run
``h = 0, ..., H - 1``.

Log-likelihoods are computed from sufficient statistics. For the RL loss the
default "exact" mode scores each sample by the expected log-likelihood under
its bootstrapped target law instead of a single draw from it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .dist import GridDist, argmin_tol, means, shift_clamped

# log-likelihood comparisons tolerate summation-order noise
LL_TOL = 1e-9


class ClampError(RuntimeError):
    """A bootstrapped target put mass above the top of the grid."""


class CondDistTable:
    """One member ``f``: a total map from ``(x, a)`` to a distribution on the grid."""

    __slots__ = ("id", "_masses", "_means")

    def __init__(self, masses, id=None):
        m = np.array(masses, dtype=float)
        if m.ndim != 3 or m.shape[2] < 2:
            raise ValueError("table must have shape (states, actions, grid_size)")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("table masses must be finite and nonnegative")
        sums = m.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError("every (x, a) entry must sum to 1")
        # renormalize only visibly off rows, so a saved table reloads bit for bit
        off = np.abs(sums - 1.0) > 4 * np.finfo(float).eps
        m[off] /= sums[off][..., None]
        m.setflags(write=False)
        self._masses = m
        self._means = None
        self.id = id

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def shape(self):
        return self._masses.shape

    @property
    def grid_size(self) -> int:
        return self._masses.shape[2]

    def means(self) -> np.ndarray:
        if self._means is None:
            self._means = means(self._masses)
        return self._means

    def __getitem__(self, xa) -> GridDist:
        x, a = xa
        return GridDist(self._masses[x, a])

    def __repr__(self):
        S, A, M = self.shape
        return f"CondDistTable(id={self.id!r}, S={S}, A={A}, M={M})"


class FiniteClass:
    """Per-step finite lists of :class:`CondDistTable` sharing grid and domain.

    The product class is indexed by tuples ``(i_0, ..., i_{H-1})``. ``H = 1``
    is the contextual-bandit case.
    """

    def __init__(self, members: Sequence[Sequence[CondDistTable]], state_ids=None, action_ids=None):
        members = [list(step) for step in members]
        if not members or any(not step for step in members):
            raise ValueError("every step needs at least one member")
        shape = members[0][0].shape
        for step in members:
            for f in step:
                if f.shape != shape:
                    raise ValueError(f"member {f.id!r} has shape {f.shape}, expected {shape}")
        self.members = members
        self.n_states, self.n_actions, self.grid_size = shape
        self.state_ids = list(state_ids) if state_ids is not None else list(range(self.n_states))
        self.action_ids = list(action_ids) if action_ids is not None else list(range(self.n_actions))
        self._stacks = [np.stack([f.masses for f in step]) for step in members]
        self._means = [means(s) for s in self._stacks]

    @classmethod
    def single_step(cls, members, **kw) -> "FiniteClass":
        return cls([list(members)], **kw)

    @property
    def horizon(self) -> int:
        return len(self.members)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(step) for step in self.members)

    def size(self) -> int:
        """|F|, the number of member tuples of the product class."""
        return int(np.prod(self.sizes()))

    def stack(self, h: int = 0) -> np.ndarray:
        return self._stacks[h]

    def means(self, h: int = 0) -> np.ndarray:
        return self._means[h]

    def __getitem__(self, hi) -> CondDistTable:
        h, i = hi
        return self.members[h][i]

    def __repr__(self):
        return f"FiniteClass(H={self.horizon}, sizes={self.sizes()}, S={self.n_states}, A={self.n_actions}, M={self.grid_size})"


class SampleCB(NamedTuple):
    x: int
    a: int
    c: int


class SampleRL(NamedTuple):
    h: int
    x: int
    a: int
    c: int
    x_next: int | None  # None marks termination after the last step


@dataclass(frozen=True)
class ConfSet:
    """Indices retained by a confidence set.

    ``members`` is a tuple of ints for single-step classes and a tuple of
    index tuples for product classes, in lexicographic order. ``degenerate``
    is set when every candidate had log-likelihood -inf for some constraint
    and the constraint was therefore dropped.
    """

    members: tuple
    degenerate: bool = False

    def __contains__(self, item):
        return item in self._lookup

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    @property
    def _lookup(self):
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = frozenset(self.members)
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    def issubset(self, other: "ConfSet") -> bool:
        return self._lookup <= other._lookup


# -- sufficient statistics ---------------------------------------------------

def cb_counts(data: Iterable[SampleCB], n_states: int, n_actions: int, grid_size: int) -> np.ndarray:
    counts = np.zeros((n_states, n_actions, grid_size))
    for s in data:
        counts[s.x, s.a, s.c] += 1
    return counts


def rl_counts(data_h: Iterable[SampleRL], n_states: int, n_actions: int, grid_size: int) -> np.ndarray:
    """Counts over ``(x, a, c, x')`` where ``x' = n_states`` is the terminal slot."""
    counts = np.zeros((n_states, n_actions, grid_size, n_states + 1))
    for s in data_h:
        xn = n_states if s.x_next is None else s.x_next
        counts[s.x, s.a, s.c, xn] += 1
    return counts


def loglik_weighted(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_{x,a,z} weights[x,a,z] * log f(z|x,a)`` for every member of ``stack``.

    Zero weights contribute 0 even where ``f`` vanishes; positive weight on a
    zero mass gives -inf.
    """
    lead = stack.shape[:-3]
    flat = stack.reshape(lead + (-1,))
    w = weights.reshape(-1)
    nz = w > 0
    if not np.any(nz):
        return np.zeros(lead)
    with np.errstate(divide="ignore"):
        logs = np.log(flat[..., nz])
    return logs @ w[nz]


def next_state_values(f_next: np.ndarray | None, policy_mode, h_next: int) -> np.ndarray | None:
    """Per next state ``x'``, the law of ``Y ~ f_next(x', a')`` with ``a'`` per the operator.

    ``policy_mode`` is ``"star"`` (greedy ``a' = argmin_a mean f_next(x', a)``,
    lowest index on ties) or a policy exposing ``probs`` of shape ``(H, S, A)``.
    Returns ``None`` when ``f_next`` is terminal.
    """
    if f_next is None:
        return None
    if isinstance(policy_mode, str):
        if policy_mode != "star":
            raise ValueError(f"unknown operator mode {policy_mode!r}")
        greedy = argmin_tol(means(f_next), axis=1)
        return f_next[np.arange(f_next.shape[0]), greedy]
    probs = np.asarray(getattr(policy_mode, "probs", policy_mode))[h_next]
    return np.einsum("sa,sam->sm", probs, f_next)


def target_weights(counts: np.ndarray, y_next: np.ndarray | None) -> np.ndarray:
    """Aggregate target laws ``delta_c * Y(x')`` over the samples summarised by ``counts``."""
    S, A, M, _ = counts.shape
    out = np.zeros((S, A, M))
    terminal = counts[..., S]
    out += terminal
    if y_next is None:
        if np.any(counts[..., :S] > 0):
            # successor states present but the next step is terminal: target is c alone
            out += counts[..., :S].sum(axis=-1)
        return out
    for c in range(M):
        block = counts[:, :, c, :S]
        if not np.any(block > 0):
            continue
        shifted, _ = shift_clamped(y_next, c)
        spill = y_next[:, M - c:].sum(axis=1) if c > 0 else np.zeros(S)
        used = block.sum(axis=(0, 1)) > 0
        if np.any(spill[used] > 0):
            raise ClampError(f"cost index {c} plus next-step return exceeds the grid")
        out += np.einsum("xas,sm->xam", block, shifted)
    return out


# -- public operations -----------------------------------------------------------

def loglik_cb(f: CondDistTable, data: Iterable[SampleCB]) -> float:
    S, A, M = f.shape
    return float(loglik_weighted(f.masses, cb_counts(data, S, A, M)))


def _confset_from_ll(ll: np.ndarray, beta: float) -> tuple[np.ndarray, bool]:
    best = ll.max()
    if best == -np.inf:
        return np.ones(ll.shape, dtype=bool), True
    return ll >= best - beta - LL_TOL, False


def confset_cb(cls: FiniteClass, data: Iterable[SampleCB], beta: float) -> ConfSet:
    if cls.horizon != 1:
        raise ValueError("confset_cb needs a single-step class")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    counts = cb_counts(data, cls.n_states, cls.n_actions, cls.grid_size)
    keep, degenerate = _confset_from_ll(loglik_weighted(cls.stack(0), counts), beta)
    return ConfSet(tuple(int(i) for i in np.flatnonzero(keep)), degenerate)


def rl_target(f_next: CondDistTable | None, sample: SampleRL, policy_mode="star",
              grid_size: int | None = None) -> GridDist:
    """Law of ``c + y`` given the observed ``(c, x')``, with ``y ~ f_next(x', a')``.

    A terminal successor (``f_next is None`` or ``x_next is None``) gives the
    point mass at ``c``; pass ``grid_size`` when ``f_next`` is ``None``.
    """
    if f_next is not None:
        grid_size = f_next.grid_size
    elif grid_size is None:
        raise ValueError("grid_size is required for a terminal successor")
    if f_next is None or sample.x_next is None:
        return GridDist.point(grid_size, sample.c)
    y = next_state_values(f_next.masses, policy_mode, sample.h + 1)[sample.x_next]
    out, clamped = shift_clamped(y, sample.c)
    if clamped:
        raise ClampError(f"target for {sample} exceeds the grid")
    return GridDist(out)


def loglik_rl(f_h: CondDistTable, f_next: CondDistTable | None, data_h: Iterable[SampleRL],
              policy_mode="star", loss: str = "exact", rng: np.random.Generator | None = None) -> float:
    """RL log-likelihood of ``f_h`` against targets bootstrapped from ``f_next``.

    ``loss="exact"`` uses the expected log-likelihood under each target law;
    ``loss="sampled"`` draws one target per sample from ``rng``.
    """
    S, A, M = f_h.shape
    data_h = list(data_h)
    if not data_h:
        return 0.0
    h_next = data_h[0].h + 1
    y = next_state_values(None if f_next is None else f_next.masses, policy_mode, h_next)
    if loss == "exact":
        w = target_weights(rl_counts(data_h, S, A, M), y)
    elif loss == "sampled":
        if rng is None:
            raise ValueError("sampled loss needs a generator")
        w = sampled_target_counts(data_h, y, S, A, M, rng)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return float(loglik_weighted(f_h.masses, w))


def sampled_target_counts(data_h, y_next, S, A, M, rng) -> np.ndarray:
    w = np.zeros((S, A, M))
    for s in data_h:
        if y_next is None or s.x_next is None:
            w[s.x, s.a, s.c] += 1
            continue
        law, clamped = shift_clamped(y_next[s.x_next], s.c)
        if clamped:
            raise ClampError(f"target for {s} exceeds the grid")
        z = int(np.searchsorted(np.cumsum(law), rng.random(), side="right"))
        w[s.x, s.a, min(z, M - 1)] += 1
    return w


@dataclass(frozen=True)
class RLConfSet(ConfSet):
    """Product-class confidence set; ``empty`` flags a realizability failure."""

    empty: bool = False


def step_logliks(cls: FiniteClass, counts: Sequence[np.ndarray], policy_mode="star",
                 loss: str = "exact", rng=None, data=None) -> list[np.ndarray]:
    """Matrix ``LL[h][i, j]`` = log-likelihood of member ``i`` at step ``h`` given ``f_{h+1} = j``.

    For the last step the second axis has length 1 (terminal successor).
    The sampled loss needs the raw per-step ``data`` lists as well.
    """
    if loss == "sampled" and (data is None or rng is None):
        raise ValueError("sampled loss needs data lists and a generator")
    H = cls.horizon
    S, A, M = cls.n_states, cls.n_actions, cls.grid_size
    out: list[np.ndarray] = [None] * H
    for h in reversed(range(H)):
        nexts = [None] if h == H - 1 else list(cls.stack(h + 1))
        cols = []
        for f_next in nexts:
            y = next_state_values(f_next, policy_mode, h + 1)
            if loss == "exact":
                w = target_weights(counts[h], y)
            else:
                w = sampled_target_counts(data[h], y, S, A, M, rng)
            cols.append(loglik_weighted(cls.stack(h), w))
        out[h] = np.stack(cols, axis=1)
    return out


def confset_from_logliks(lls: Sequence[np.ndarray], beta: float) -> RLConfSet:
    degenerate = False
    oks = []
    for ll in lls:
        best = ll.max(axis=0)
        dead = best == -np.inf
        degenerate |= bool(np.any(dead))
        ok = ll >= (best - beta - LL_TOL)[None, :]
        ok[:, dead] = True
        oks.append(ok)
    H = len(oks)
    joint = np.ones((1,) * H, dtype=bool)
    for h, ok in enumerate(oks):
        if h == H - 1:
            shape = [1] * H
            shape[h] = ok.shape[0]
            joint = joint & ok[:, 0].reshape(shape)
        else:
            shape = [1] * H
            shape[h], shape[h + 1] = ok.shape
            joint = joint & ok.reshape(shape)
    members = tuple(tuple(int(i) for i in row) for row in np.argwhere(joint))
    return RLConfSet(members, degenerate, empty=not members)


def confset_rl(cls: FiniteClass, data: Sequence[Iterable[SampleRL]], beta: float, operator_mode="star",
               loss: str = "exact", rng: np.random.Generator | None = None) -> RLConfSet:
    """Tuples ``(f_0, ..., f_{H-1})`` that are ``beta``-near-optimal in log-likelihood at every step."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if len(data) != cls.horizon:
        raise ValueError("need one dataset per step")
    S, A, M = cls.n_states, cls.n_actions, cls.grid_size
    data = [list(d) for d in data]
    counts = [rl_counts(d, S, A, M) for d in data]
    return confset_from_logliks(step_logliks(cls, counts, operator_mode, loss, rng, data), beta)


def width(confset: ConfSet | Iterable, cls: FiniteClass, x: int, a: int, h: int = 0) -> float:
    """Largest disagreement in mean at ``(x, a)`` between two members of ``confset``."""
    idx = [m[h] if isinstance(m, tuple) else m for m in confset]
    if not idx:
        raise ValueError("confidence set is empty")
    vals = cls.means(h)[np.asarray(idx), x, a]
    return float(vals.max() - vals.min())


def mass_floor_violations(cls: FiniteClass, eta_min: float) -> list[tuple[int, int, int, int]]:
    """(h, member, x, a) entries whose positive masses dip below ``eta_min``."""
    bad = []
    for h in range(cls.horizon):
        st = cls.stack(h)
        low = (st > 0) & (st < eta_min)
        for i, x, a in sorted({(int(i), int(x), int(a)) for i, x, a, _ in np.argwhere(low)}):
            bad.append((h, i, x, a))
    return bad
