"""Built-in instances and random generators for tests and property sweeps."""
from __future__ import annotations

import itertools

import numpy as np

from .env import CBEnv, Policy, TabularMDP, bellman_arrays, return_tables
from .func_class import CondDistTable, FiniteClass


def _law(M: int, points: dict) -> np.ndarray:
    m = np.zeros(M)
    for z, p in points.items():
        m[int(round(z * (M - 1)))] += p
    return m


def _table(M: int, laws) -> np.ndarray:
    """``laws[x][a]`` is a ``{value: mass}`` dict."""
    return np.stack([np.stack([_law(M, d) for d in row]) for row in laws])


# -- contextual bandits ---------------------------------------------------------------

def cb_deterministic() -> tuple[CBEnv, FiniteClass]:
    """Two contexts, two actions, deterministic costs and eight members.

    Alternatives either share the observed support (eliminated gradually by
    the likelihood) or put no mass on it (eliminated at the first visit).
    """
    M = 11
    truth = [[{0.3: 1}, {0.5: 1}], [{0.6: 1}, {0.2: 1}]]
    alts = [
        {(0, 1): {0.5: 0.4, 0.0: 0.6}},
        {(1, 0): {0.6: 0.2, 0.0: 0.8}},
        {(0, 1): {0.1: 1}},
        {(1, 0): {0.1: 1}},
        {(0, 1): {0.5: 0.4, 0.0: 0.6}, (1, 0): {0.6: 0.2, 0.0: 0.8}},
        {(0, 0): {0.4: 1}},
        {(0, 1): {0.5: 0.1, 0.0: 0.9}},
    ]
    members = [CondDistTable(_table(M, truth), id="truth")]
    for i, alt in enumerate(alts):
        laws = [[dict(d) for d in row] for row in truth]
        for (x, a), d in alt.items():
            laws[x][a] = d
        members.append(CondDistTable(_table(M, laws), id=f"alt{i}"))
    env = CBEnv(members[0].masses)
    return env, FiniteClass.single_step(members)


def scaled_bernoulli_law(M: int, mu: float, sigma2: float) -> np.ndarray:
    """``(1 - rho) delta_mu + rho Bern(mu)`` with ``rho = 4 sigma2``: mean ``mu``, variance ``4 sigma2 mu (1 - mu)``."""
    rho = 4.0 * sigma2
    if not 0 <= rho <= 1:
        raise ValueError("sigma2 must lie in [0, 0.25]")
    return (1 - rho) * _law(M, {mu: 1.0}) + rho * _law(M, {0.0: 1 - mu, 1.0: mu})


def cb_variance_scaled(sigma2: float) -> tuple[CBEnv, FiniteClass]:
    """Means fixed at 0.5 / 0.7 per context; variance scaled by ``sigma2``.

    The class has 16 members: each of the four ``(x, a)`` pairs independently
    carries the true mean or the swapped one, with the same variance scaling.
    """
    M = 11
    mu = np.array([[0.5, 0.7], [0.7, 0.5]])
    members = []
    for flips in itertools.product([0, 1], repeat=4):
        tab = np.zeros((2, 2, M))
        for (x, a), fl in zip(itertools.product(range(2), range(2)), flips):
            m = mu[x, a] if not fl else 1.2 - mu[x, a]
            tab[x, a] = scaled_bernoulli_law(M, float(m), sigma2)
        members.append(CondDistTable(tab, id="".join(map(str, flips))))
    env = CBEnv(members[0].masses)
    return env, FiniteClass.single_step(members)


def cb_gap() -> tuple[CBEnv, FiniteClass]:
    """One context: a two-point optimal arm (mean 0.2) and a deterministic arm at 0.5.

    Alternatives make the suboptimal arm look cheaper while sharing its
    support, so it keeps being tried a logarithmic number of times.
    """
    M = 11
    a0 = [{0.0: 0.5, 0.4: 0.5}, {0.0: 0.3, 0.4: 0.7}, {0.0: 0.2, 0.4: 0.8}]
    a1 = [{0.5: 1.0}, {0.0: 0.7, 0.5: 0.3}, {0.0: 0.9, 0.5: 0.1}]
    members = [CondDistTable(_table(M, [[l0, l1]]), id=f"{i}{j}")
               for i, l0 in enumerate(a0) for j, l1 in enumerate(a1)]
    env = CBEnv(members[0].masses)
    return env, FiniteClass.single_step(members)


# -- tabular MDPs -------------------------------------------------------------------------

def rl_small() -> tuple[TabularMDP, FiniteClass]:
    """H = 2, two states, two actions, five grid points, per-step costs in ``[0, 0.5]``.

    The last-step class holds the true costs and three alternatives; the
    first-step class is the closure of their Bellman images, so the class is
    complete by construction.
    """
    M = 5
    P0 = np.array([[[0.8, 0.2], [0.3, 0.7]], [[0.5, 0.5], [0.1, 0.9]]])
    P = np.stack([P0, np.broadcast_to(np.eye(2)[:, None, :], (2, 2, 2))])
    C0 = _table(M, [[{0: .5, .25: .5}, {0: .8, .5: .2}], [{.25: 1}, {0: .3, .5: .7}]])
    C1 = _table(M, [[{0: .6, .5: .4}, {.25: 1}], [{0: .2, .25: .8}, {0: .7, .5: .3}]])
    mdp = TabularMDP(P, np.stack([C0, C1]), initial_dist=[0.5, 0.5])
    last = [C1]
    for x, a, d in [(0, 1, {0: .5, .25: .5}), (1, 0, {0: .9, .25: .1}), (0, 0, {0: .3, .5: .7})]:
        t = C1.copy()
        t[x, a] = _law(M, d)
        last.append(t)
    first = closure_step(mdp, 0, last)
    cls = FiniteClass([[CondDistTable(t, id=f"h0_{i}") for i, t in enumerate(first)],
                       [CondDistTable(t, id=f"h1_{i}") for i, t in enumerate(last)]])
    return mdp, cls


def closure_step(mdp: TabularMDP, h: int, next_members: list[np.ndarray]) -> list[np.ndarray]:
    """Distinct Bellman images of ``next_members`` under every deterministic next-step action map."""
    S, A = mdp.n_states, mdp.n_actions
    out: list[np.ndarray] = []
    for f in next_members:
        for acts in itertools.product(range(A), repeat=S):
            img = bellman_arrays(mdp, h, f[np.arange(S), list(acts)])
            if not any(np.array_equal(img, g) for g in out):
                out.append(img)
    return out


def offline_deterministic(J: int = 16) -> tuple[TabularMDP, FiniteClass, np.ndarray, list[Policy]]:
    """Single-step offline instance with ``J`` states and a geometric data distribution.

    Action 0 costs 0 and action 1 costs 0.5 everywhere. Member ``s`` claims
    action 0 costs 1 on states ``j >= s``, so states past the last observed
    one stay ambiguous and pessimism falls back to action 1 there. The
    policies are thresholds: action 0 below ``t`` and action 1 from ``t`` on.
    Data cover action 0 only, with ``nu(x_j) ~ 2^-j`` and ``d_1 = nu``.
    """
    M = 3
    w = 2.0 ** -np.arange(1, J + 1)
    w[-1] *= 2
    w /= w.sum()
    C = np.zeros((J, 2, M))
    C[:, 0, 0] = 1.0
    C[:, 1, 1] = 1.0
    P = np.broadcast_to(np.eye(J)[:, None, :], (J, 2, J))[None]
    mdp = TabularMDP(P, C[None], initial_dist=w)
    members = []
    for s in range(J, -1, -1):
        t = C.copy()
        t[s:, 0] = 0.0
        t[s:, 0, M - 1] = 1.0
        members.append(CondDistTable(t, id=f"from{s}"))
    nu = np.zeros((1, J, 2))
    nu[0, :, 0] = w
    policies = [Policy.deterministic((np.arange(J) >= t).astype(int)[None], 2) for t in range(J, -1, -1)]
    return mdp, FiniteClass.single_step(members), nu, policies


def offline_stochastic(J: int = 8, g0: float = 0.4, ratio: float = 0.7) -> tuple[TabularMDP, FiniteClass, np.ndarray, list[Policy]]:
    """Single-step offline instance with Bernoulli costs and geometric gaps.

    At state ``j`` action 0 is ``Bern(0.5 - g_j)`` with ``g_j = g0 ratio^j``
    and action 1 is the point mass at 0.5. Each member swaps some subset of
    the action-0 laws to ``Bern(0.5 + g_j)``. Half the data is spread over
    action 0 and half over action 1; ``d_1`` is uniform. The policies are all
    ``2^J`` deterministic ones.
    """
    M = 3
    g = g0 * ratio ** np.arange(J)
    C = np.zeros((J, 2, M))
    C[:, 0, 0] = 0.5 + g
    C[:, 0, 2] = 0.5 - g
    C[:, 1, 1] = 1.0
    P = np.broadcast_to(np.eye(J)[:, None, :], (J, 2, J))[None]
    mdp = TabularMDP(P, C[None], initial_dist=np.full(J, 1.0 / J))
    members = []
    for mask in itertools.product([0, 1], repeat=J):
        t = C.copy()
        for j, bit in enumerate(mask):
            if bit:
                t[j, 0, 0], t[j, 0, 2] = 0.5 - g[j], 0.5 + g[j]
        members.append(CondDistTable(t, id="".join(map(str, mask))))
    nu = np.full((1, J, 2), 0.5 / J)
    policies = [Policy.deterministic(np.array(acts)[None], 2) for acts in itertools.product([0, 1], repeat=J)]
    return mdp, FiniteClass.single_step(members), nu, policies


BUILTINS = {
    "cb_deterministic": cb_deterministic,
    "cb_gap": cb_gap,
    "cb_variance_scaled": cb_variance_scaled,
    "rl_small": rl_small,
    "offline_deterministic": offline_deterministic,
    "offline_stochastic": offline_stochastic,
}


# -- random generators --------------------------------------------------------------------

def random_dist(rng: np.random.Generator, M: int, sparsity: float = 0.3) -> np.ndarray:
    """Dirichlet masses with some coordinates zeroed (at least one survives)."""
    keep = rng.random(M) >= sparsity
    keep[rng.integers(M)] = True
    p = np.zeros(M)
    p[keep] = rng.dirichlet(np.full(keep.sum(), 0.5))
    return p


def random_pair(rng: np.random.Generator, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent pairs, near pairs and disjoint-support pairs in equal parts."""
    f = random_dist(rng, M)
    kind = rng.integers(3)
    if kind == 0:
        g = random_dist(rng, M)
    elif kind == 1:
        eps = rng.random() ** 3
        g = (1 - eps) * f + eps * random_dist(rng, M)
    else:
        g = np.zeros(M)
        free = f == 0
        if free.any():
            g[free] = rng.dirichlet(np.full(free.sum(), 0.5))
        else:
            g = random_dist(rng, M)
    return f, g / g.sum()


def random_mdp(rng: np.random.Generator, max_h: int = 3, max_s: int = 3, max_a: int = 3) -> TabularMDP:
    """Small MDP whose per-step cost support fits ``H`` steps on the grid."""
    H = int(rng.integers(1, max_h + 1))
    S = int(rng.integers(1, max_s + 1))
    A = int(rng.integers(1, max_a + 1))
    per = int(rng.integers(1, 4))
    M = per * H + 1
    P = rng.dirichlet(np.ones(S), size=(H, S, A)) * (rng.random((H, S, A, S)) < 0.7)
    empty = P.sum(axis=-1) == 0
    P[empty, 0] = 1.0
    P /= P.sum(axis=-1, keepdims=True)
    C = np.zeros((H, S, A, M))
    C[..., : per + 1] = np.stack([[[random_dist(rng, per + 1) for _ in range(A)] for _ in range(S)] for _ in range(H)])
    return TabularMDP(P, C, initial_dist=rng.dirichlet(np.ones(S)))


def random_policy(rng: np.random.Generator, H: int, S: int, A: int, deterministic: bool | None = None) -> Policy:
    if deterministic is None:
        deterministic = bool(rng.integers(2))
    if deterministic:
        return Policy.deterministic(rng.integers(0, A, size=(H, S)), A)
    return Policy(rng.dirichlet(np.ones(A), size=(H, S)))


def random_f(rng: np.random.Generator, mdp: TabularMDP, pi: Policy) -> list[np.ndarray]:
    """Per-step tables mixing the true return law of ``pi`` with noise.

    The noise at step ``h`` lives below the remaining cost budget, so Bellman
    images never leave the grid.
    """
    Z = return_tables(mdp, pi)
    H, S, A, M = mdp.C.shape
    out = []
    for h in range(H):
        top = (M - 1) * (H - h) // H
        noise = np.zeros((S, A, M))
        noise[..., : top + 1] = np.stack([[random_dist(rng, top + 1) for _ in range(A)] for _ in range(S)])
        eps = rng.random() ** 2
        out.append((1 - eps) * Z[h] + eps * noise)
    return out
