"""Contextual bandits and finite-horizon tabular MDPs with grid-valued costs.

Everything here is exact: distributional Bellman operators, return
distributions, occupancies and concentrability are computed by finite sums
over the tabular model. Sampling always goes through an explicitly passed
``numpy.random.Generator``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .dist import GridDist, argmin_tol, means, variances
from .func_class import ClampError, CondDistTable, SampleCB, SampleRL


class CertificateError(ValueError):
    """Cumulative cost can exceed 1 on some trajectory."""


def _as_probs(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,) or np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
        raise ValueError(f"{what} must be a probability vector of length {n}")
    return v / v.sum()


def draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Sample an index; point masses are returned without consuming randomness."""
    nz = np.flatnonzero(probs > 0)
    if len(nz) == 1:
        return int(nz[0])
    cum = np.cumsum(probs)
    return int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), len(probs) - 1))


class Policy:
    """Per-step action distributions, ``probs[h, x, a]``."""

    def __init__(self, probs):
        p = np.array(probs, dtype=float)
        if p.ndim != 3:
            raise ValueError("policy probs must have shape (H, S, A)")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("policy rows must be probability vectors")
        p.setflags(write=False)
        self.probs = p

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        if actions.ndim == 1:
            actions = actions[None, :]
        H, S = actions.shape
        p = np.zeros((H, S, n_actions))
        p[np.arange(H)[:, None], np.arange(S)[None, :], actions] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, horizon: int, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((horizon, n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def greedy(cls, mean_tables: Sequence[np.ndarray]) -> "Policy":
        """Argmin of each ``(S, A)`` mean table, lowest action on ties."""
        acts = np.stack([argmin_tol(q, axis=1) for q in mean_tables])
        return cls.deterministic(acts, mean_tables[0].shape[1])

    @property
    def shape(self):
        return self.probs.shape

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def actions(self) -> np.ndarray:
        if not self.is_deterministic:
            raise ValueError("policy is stochastic")
        return self.probs.argmax(axis=2)

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        if self.is_deterministic:
            return f"Policy(actions={self.actions().tolist()})"
        return f"Policy(shape={self.shape})"


class TabularMDP:
    """Finite-horizon MDP with transition rows ``P[h, x, a]`` and cost laws ``C[h, x, a]``.

    Construction certifies that cumulative cost stays in ``[0, 1]`` on every
    trajectory from every state, so bootstrapped targets never leave the grid.
    """

    def __init__(self, transition, cost, initial_dist=None, initial_sequence=None,
                 state_ids=None, action_ids=None):
        P = np.array(transition, dtype=float)
        C = np.array(cost, dtype=float)
        if P.ndim != 4 or C.ndim != 4 or P.shape[:3] != C.shape[:3] or P.shape[1] != P.shape[3]:
            raise ValueError("transition must be (H, S, A, S) and cost (H, S, A, M)")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=3) - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1")
        if C.shape[3] < 2 or np.any(C < 0) or np.any(np.abs(C.sum(axis=3) - 1.0) > 1e-12):
            raise ValueError("cost laws must be distributions on a grid of >= 2 points")
        P /= P.sum(axis=3, keepdims=True)
        C /= C.sum(axis=3, keepdims=True)
        P.setflags(write=False)
        C.setflags(write=False)
        self.P, self.C = P, C
        self.horizon, self.n_states, self.n_actions, self.grid_size = C.shape
        self.initial_dist = None if initial_dist is None else _as_probs(initial_dist, self.n_states, "initial_dist")
        self.initial_sequence = None if initial_sequence is None else [int(x) for x in initial_sequence]
        if self.initial_sequence is not None and any(not 0 <= x < self.n_states for x in self.initial_sequence):
            raise ValueError("initial sequence has unknown states")
        self.state_ids = list(state_ids) if state_ids is not None else list(range(self.n_states))
        self.action_ids = list(action_ids) if action_ids is not None else list(range(self.n_actions))
        top = self.max_cost_to_go()
        if top.max() > self.grid_size - 1:
            raise CertificateError(
                f"cumulative cost can reach index {int(top.max())} > {self.grid_size - 1}")

    def max_cost_to_go(self) -> np.ndarray:
        """Largest reachable cumulative cost index from each ``(h, x)``, shape ``(H, S)``."""
        H, S, A, M = self.C.shape
        top = np.where(self.C > 0, np.arange(M), -1).max(axis=3)  # (H, S, A)
        out = np.zeros((H + 1, S), dtype=int)
        for h in reversed(range(H)):
            nxt = np.where(self.P[h] > 0, out[h + 1][None, None, :], -1).max(axis=2)
            out[h] = (top[h] + (nxt if h < H - 1 else 0)).max(axis=1)
        return out[:H]

    def initial_state(self, k: int, rng: np.random.Generator) -> int:
        if self.initial_sequence is not None:
            return self.initial_sequence[k % len(self.initial_sequence)]
        if self.initial_dist is None:
            raise ValueError("MDP has neither an initial distribution nor a sequence")
        return draw(rng, self.initial_dist)

    def cost_means(self) -> np.ndarray:
        return means(self.C)

    def __repr__(self):
        return f"TabularMDP(H={self.horizon}, S={self.n_states}, A={self.n_actions}, M={self.grid_size})"


class CBEnv:
    """Contextual bandit: contexts drawn i.i.d. or read from an explicit sequence."""

    def __init__(self, cost, context_dist=None, context_sequence=None, state_ids=None, action_ids=None):
        C = np.array(cost, dtype=float)
        if C.ndim != 3 or C.shape[2] < 2:
            raise ValueError("cost must be (contexts, actions, grid_size)")
        if np.any(C < 0) or np.any(np.abs(C.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("cost laws must sum to 1")
        C /= C.sum(axis=2, keepdims=True)
        C.setflags(write=False)
        self.C = C
        self.n_states, self.n_actions, self.grid_size = C.shape
        if context_dist is None and context_sequence is None:
            context_dist = np.full(self.n_states, 1.0 / self.n_states)
        self.context_dist = None if context_dist is None else _as_probs(context_dist, self.n_states, "context_dist")
        self.context_sequence = None if context_sequence is None else [int(x) for x in context_sequence]
        self.state_ids = list(state_ids) if state_ids is not None else list(range(self.n_states))
        self.action_ids = list(action_ids) if action_ids is not None else list(range(self.n_actions))

    def context(self, k: int, rng: np.random.Generator) -> int:
        if self.context_sequence is not None:
            return self.context_sequence[k % len(self.context_sequence)]
        return draw(rng, self.context_dist)

    def means(self) -> np.ndarray:
        return means(self.C)

    def variances(self) -> np.ndarray:
        return variances(self.C)

    def table(self) -> CondDistTable:
        return CondDistTable(self.C, id="truth")

    def as_mdp(self) -> TabularMDP:
        S, A, _ = self.C.shape
        P = np.zeros((1, S, A, S))
        P[0, np.arange(S), :, np.arange(S)] = 1.0
        return TabularMDP(P, self.C[None], initial_dist=self.context_dist,
                          initial_sequence=self.context_sequence,
                          state_ids=self.state_ids, action_ids=self.action_ids)

    def __repr__(self):
        return f"CBEnv(X={self.n_states}, A={self.n_actions}, M={self.grid_size})"


# -- distributional Bellman operators -----------------------------------------

def _masses(f):
    if f is None:
        return None
    return f.masses if isinstance(f, CondDistTable) else np.asarray(f, dtype=float)


def bellman_arrays(mdp: TabularMDP, h: int, y_next: np.ndarray | None) -> np.ndarray:
    """``C_h(x,a) * Y(x')`` with ``x' ~ P_h(x,a)``; ``y_next`` is ``(S, M)`` or terminal."""
    C = mdp.C[h]
    if y_next is None or h == mdp.horizon - 1:
        return np.array(C)
    S, A, M = C.shape
    mix = np.einsum("xas,sm->xam", mdp.P[h], y_next)
    out = np.zeros((S, A, M))
    for c in range(M):
        w = C[:, :, c]
        if not np.any(w > 0):
            continue
        if c > 0:
            spill = mix[:, :, M - c:].sum(axis=2)
            if np.any(spill[w > 0] > 0):
                raise ClampError(f"step {h}: cost index {c} plus continuation exceeds the grid")
            out[:, :, c:] += w[..., None] * mix[:, :, : M - c]
        else:
            out += w[..., None] * mix
    return out


def _pi_next(f_next, pi: Policy, h: int):
    f = _masses(f_next)
    if f is None:
        return None
    return np.einsum("sa,sam->sm", pi.probs[h + 1], f)


def _star_next(f_next):
    f = _masses(f_next)
    if f is None:
        return None
    greedy = argmin_tol(means(f), axis=1)
    return f[np.arange(f.shape[0]), greedy]


def bellman_dist_pi(mdp: TabularMDP, f_next, pi: Policy, h: int) -> CondDistTable:
    """Distributional Bellman operator for policy ``pi`` at step ``h``; ``f_next=None`` is terminal."""
    y = None if h == mdp.horizon - 1 else _pi_next(f_next, pi, h)
    return CondDistTable(bellman_arrays(mdp, h, y), id=f"T{h}^pi")


def bellman_dist_star(mdp: TabularMDP, f_next, h: int) -> CondDistTable:
    """Optimality operator: continuation uses ``argmin_a mean f_next(x', a)``, lowest index on ties."""
    y = None if h == mdp.horizon - 1 else _star_next(f_next)
    return CondDistTable(bellman_arrays(mdp, h, y), id=f"T{h}^star")


def greedy_policy(tables: Sequence[np.ndarray]) -> Policy:
    return Policy.greedy([means(_masses(t)) for t in tables])


# -- exact evaluation ----------------------------------------------------------------

def return_tables(mdp: TabularMDP, pi: Policy) -> list[np.ndarray]:
    """``Z_h^pi(x, a)`` for every step, each ``(S, A, M)``."""
    H = mdp.horizon
    Z = [None] * H
    for h in reversed(range(H)):
        Z[h] = bellman_arrays(mdp, h, None if h == H - 1 else _pi_next(Z[h + 1], pi, h))
    return Z


def optimal_tables(mdp: TabularMDP) -> tuple[Policy, list[np.ndarray]]:
    """Distributional value iteration with the optimality operator; returns ``(pi_star, Z_star)``."""
    H = mdp.horizon
    Z = [None] * H
    for h in reversed(range(H)):
        Z[h] = bellman_arrays(mdp, h, None if h == H - 1 else _star_next(Z[h + 1]))
    return greedy_policy(Z), Z


def state_return(Z_h: np.ndarray, pi: Policy, h: int) -> np.ndarray:
    """``Z_h^pi(x)`` for every ``x``: mixes ``Z_h(x, a)`` over ``a ~ pi_h(x)``."""
    return np.einsum("sa,sam->sm", pi.probs[h], Z_h)


def _x1_probs(mdp, x1) -> np.ndarray:
    if x1 is None:
        if mdp.initial_dist is None:
            raise ValueError("no initial distribution; pass x1")
        return mdp.initial_dist
    if np.isscalar(x1):
        p = np.zeros(mdp.n_states)
        p[int(x1)] = 1.0
        return p
    return _as_probs(x1, mdp.n_states, "x1 distribution")


def return_distribution(mdp: TabularMDP, pi: Policy, h: int = 0, x=None, a: int | None = None) -> GridDist:
    """Exact law of the cost-to-go from ``(h, x)`` or ``(h, x, a)``.

    ``x`` may be a state index or (for ``a is None``) a distribution over states.
    """
    Z = return_tables(mdp, pi)[h]
    if a is not None:
        return GridDist(Z[int(x), a])
    px = _x1_probs(mdp, x)
    return GridDist(px @ state_return(Z, pi, h))


def q_values(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """``Q_h^pi(x, a)`` as an ``(H, S, A)`` array, by the mean Bellman recursion."""
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    Q = np.zeros((H, S, A))
    cm = mdp.cost_means()
    v_next = np.zeros(S)
    for h in reversed(range(H)):
        Q[h] = cm[h] + (mdp.P[h] @ v_next if h < H - 1 else 0.0)
        v_next = (pi.probs[h] * Q[h]).sum(axis=1)
    return Q


def v_values(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    Q = q_values(mdp, pi)
    return (pi.probs * Q).sum(axis=2)


def value(mdp: TabularMDP, pi: Policy, x1=None) -> float:
    return float(_x1_probs(mdp, x1) @ v_values(mdp, pi)[0])


def occupancy(mdp: TabularMDP, pi: Policy, x1_dist=None) -> np.ndarray:
    """``d_h^pi(x, a)`` as an ``(H, S, A)`` array; each layer sums to 1."""
    H = mdp.horizon
    s = _x1_probs(mdp, x1_dist)
    d = np.zeros((H, mdp.n_states, mdp.n_actions))
    for h in range(H):
        d[h] = s[:, None] * pi.probs[h]
        if h < H - 1:
            s = np.einsum("xa,xas->s", d[h], mdp.P[h])
    return d


def concentrability(mdp: TabularMDP, pi_tilde: Policy, nu: np.ndarray, x1_dist=None) -> float:
    """``max_h max_{x,a} d_h^pi(x,a) / nu_h(x,a)``; ``inf`` when ``nu`` misses a visited pair."""
    d = occupancy(mdp, pi_tilde, x1_dist)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != d.shape:
        raise ValueError(f"nu must have shape {d.shape}")
    visited = d > 0
    if np.any(visited & (nu <= 0)):
        return float("inf")
    return float((d[visited] / nu[visited]).max())


# -- sampling ------------------------------------------------------------------------

def sample_episode(env, pi: Policy, rng: np.random.Generator, x1: int | None = None, k: int = 0):
    """Roll in ``pi`` once. A :class:`CBEnv` yields one :class:`SampleCB`; an MDP yields ``H`` :class:`SampleRL`."""
    if isinstance(env, CBEnv):
        x = env.context(k, rng) if x1 is None else int(x1)
        a = draw(rng, pi.probs[0, x])
        c = draw(rng, env.C[x, a])
        return [SampleCB(x, a, c)]
    mdp = env
    x = mdp.initial_state(k, rng) if x1 is None else int(x1)
    out = []
    for h in range(mdp.horizon):
        a = draw(rng, pi.probs[h, x])
        c = draw(rng, mdp.C[h, x, a])
        if h < mdp.horizon - 1:
            xn = draw(rng, mdp.P[h, x, a])
        else:
            xn = None
        out.append(SampleRL(h, x, a, c, xn))
        x = xn
    return out


def sample_transition(mdp: TabularMDP, h: int, x: int, a: int, rng: np.random.Generator) -> SampleRL:
    c = draw(rng, mdp.C[h, x, a])
    xn = draw(rng, mdp.P[h, x, a]) if h < mdp.horizon - 1 else None
    return SampleRL(h, x, a, c, xn)


def sample_offline_dataset(mdp: TabularMDP, nu: np.ndarray, N: int, rng: np.random.Generator) -> list[list[SampleRL]]:
    """``N`` i.i.d. tuples per step with ``(x, a) ~ nu_h``, ``c ~ C_h``, ``x' ~ P_h``."""
    H, S, A, M = mdp.C.shape
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (H, S, A) or np.any(nu < 0) or np.any(np.abs(nu.sum(axis=(1, 2)) - 1.0) > 1e-12):
        raise ValueError(f"nu must be {H} distributions over {S}x{A} pairs")
    data = []
    for h in range(H):
        if N == 0:
            data.append([])
            continue
        cum = np.cumsum(nu[h].ravel())
        xa = np.minimum(np.searchsorted(cum, rng.random(N) * cum[-1], side="right"), S * A - 1)
        xs, As = np.divmod(xa, A)
        ccum = np.cumsum(mdp.C[h], axis=2)
        cs = (rng.random(N)[:, None] * ccum[xs, As, -1:] >= ccum[xs, As]).sum(axis=1)
        cs = np.minimum(cs, M - 1)
        if h < H - 1:
            pcum = np.cumsum(mdp.P[h], axis=2)
            xn = (rng.random(N)[:, None] * pcum[xs, As, -1:] >= pcum[xs, As]).sum(axis=1)
            xn = np.minimum(xn, S - 1)
            data.append([SampleRL(h, int(x), int(a), int(c), int(n)) for x, a, c, n in zip(xs, As, cs, xn)])
        else:
            data.append([SampleRL(h, int(x), int(a), int(c), None) for x, a, c in zip(xs, As, cs)])
    return data
