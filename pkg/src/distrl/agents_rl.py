"""O-DISCO and P-DISCO over finite product classes, with exact theorem diagnostics."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .agents_cb import OPT_TOL, UnrealizableError
from .dist import argmin_tol, variances
from .env import (Policy, TabularMDP, bellman_arrays, concentrability, draw,
                  optimal_tables, return_tables, sample_transition, v_values)
from .func_class import FiniteClass, SampleRL, confset_from_logliks, rl_counts, step_logliks
from .theory import delta_tables, expected_delta, offline_decomposition_bound, online_decomposition_bound

ONLINE_CSV_COLUMNS = ("k", "regret_inst", "regret_cum", "var_Zk", "Delta_k", "optimism_flag")
COMPLETENESS_LIMIT = 10_000


def auto_beta_online(H: int, K: int, class_size: int, delta: float) -> float:
    return math.log(H * K * class_size / delta)


def auto_beta_offline(H: int, n_policies: int, class_size: int, delta: float) -> float:
    return math.log(H * n_policies * class_size / delta)


def _beta(beta, auto: float) -> float:
    if beta is None or beta == "auto":
        return auto
    beta = float(beta)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return beta


@dataclass
class OnlineRunConfig:
    K: int
    delta: float = 0.1
    beta: float | str = "auto"
    uae: bool = False
    loss: str = "exact"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass
class OfflineRunConfig:
    N: int
    delta: float = 0.1
    beta: float | str = "auto"
    loss: str = "exact"

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be >= 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass
class OnlineEpisode:
    k: int
    x1: int
    member: tuple
    policy: Policy
    optimistic_value: float
    v_star: float
    regret_inst: float
    var_Zk: float
    Delta_k: float
    optimism_flag: bool
    decomposition_slack: float


@dataclass
class OnlineRunResult:
    logs: list[OnlineEpisode]
    summary: dict = field(default_factory=dict)

    def rows(self):
        cum = 0.0
        for e in self.logs:
            cum += e.regret_inst
            yield (e.k, e.regret_inst, cum, e.var_Zk, e.Delta_k, int(e.optimism_flag))

    def regret_curve(self) -> np.ndarray:
        return np.cumsum([e.regret_inst for e in self.logs])


def _tables(cls: FiniteClass, member: tuple) -> list[np.ndarray]:
    return [cls.stack(h)[i] for h, i in enumerate(member)]


def _uae_tuple(mdp: TabularMDP, pi: Policy, x1: int, h: int, rng: np.random.Generator) -> SampleRL:
    """Roll in ``pi`` for ``h`` steps from ``x1``, then take a uniform action."""
    x = x1
    for t in range(h):
        a = draw(rng, pi.probs[t, x])
        draw(rng, mdp.C[t, x, a])
        x = draw(rng, mdp.P[t, x, a])
    a = int(rng.integers(mdp.n_actions))
    return sample_transition(mdp, h, x, a, rng)


def _rollout(mdp: TabularMDP, pi: Policy, x1: int, rng: np.random.Generator) -> list[SampleRL]:
    x, out = x1, []
    for h in range(mdp.horizon):
        s = sample_transition(mdp, h, x, draw(rng, pi.probs[h, x]), rng)
        out.append(s)
        x = s.x_next
    return out


def odisco_run(mdp: TabularMDP, cls: FiniteClass, config: OnlineRunConfig, rng: np.random.Generator) -> OnlineRunResult:
    """Optimistic distributional confidence-set RL.

    The confidence set uses the optimality operator. The optimistic tuple
    takes the lowest action attaining ``min_a min_f fbar_1(x_1, a)`` and then
    the first tuple (lexicographic order) attaining that value there.
    """
    H, S, A, M = cls.horizon, cls.n_states, cls.n_actions, cls.grid_size
    if H != mdp.horizon or (S, A, M) != (mdp.n_states, mdp.n_actions, mdp.grid_size):
        raise ValueError("class and MDP shapes differ")
    n = cls.size()
    beta = _beta(config.beta, auto_beta_online(H, config.K, n, config.delta))
    pi_star, _ = optimal_tables(mdp)
    V_star = v_values(mdp, pi_star)[0]
    counts = [np.zeros((S, A, M, S + 1)) for _ in range(H)]
    data = [[] for _ in range(H)]
    fbar0 = cls.means(0)
    logs: list[OnlineEpisode] = []
    policies: list[Policy] = []
    for k in range(config.K):
        x1 = mdp.initial_state(k, rng)
        lls = step_logliks(cls, counts, "star", config.loss, rng, data)
        cs = confset_from_logliks(lls, beta)
        if cs.empty:
            raise UnrealizableError(f"episode {k}: empty confidence set")
        tuples = np.array(cs.members)
        vals = fbar0[tuples[:, 0], x1, :]  # (m, A)
        a_star = int(argmin_tol(vals.min(axis=0)))
        member = tuple(int(i) for i in tuples[int(argmin_tol(vals[:, a_star]))])
        f_k = _tables(cls, member)
        pi_k = Policy.greedy([cls.means(h)[i] for h, i in enumerate(member)])
        policies.append(pi_k)

        if config.uae:
            new = [_uae_tuple(mdp, pi_k, x1, h, rng) for h in range(H)]
        else:
            new = _rollout(mdp, pi_k, x1, rng)
        for s in new:
            xn = S if s.x_next is None else s.x_next
            counts[s.h][s.x, s.a, s.c, xn] += 1
            data[s.h].append(s)

        opt_val = float(vals[:, a_star].min())
        v_k = float(v_values(mdp, pi_k)[0, x1])
        z = np.einsum("a,am->m", pi_k.probs[0, x1], return_tables(mdp, pi_k)[0][x1])
        var_z = float(variances(z))
        Delta = float(expected_delta(mdp, f_k, pi_k, x1).sum())
        regret = v_k - float(V_star[x1])
        logs.append(OnlineEpisode(
            k=k, x1=x1, member=member, policy=pi_k, optimistic_value=opt_val,
            v_star=float(V_star[x1]), regret_inst=regret, var_Zk=var_z, Delta_k=Delta,
            optimism_flag=bool(opt_val <= V_star[x1] + OPT_TOL),
            decomposition_slack=online_decomposition_bound(var_z, Delta, H) - regret,
        ))
    res = OnlineRunResult(logs)
    flags = [e.optimism_flag for e in logs]
    res.summary = {
        "config": {"K": config.K, "delta": config.delta, "beta": beta, "class_size": n, "H": H,
                   "uae": config.uae, "loss": config.loss},
        "regret_cum": float(sum(e.regret_inst for e in logs)),
        "sum_var": float(sum(e.var_Zk for e in logs)),
        "sum_Delta": float(sum(e.Delta_k for e in logs)),
        "sum_v_star": float(sum(e.v_star for e in logs)),
        "optimism_frequency": float(np.mean(flags)),
        "optimism_all": bool(all(flags)),
        "decomposition_min_slack": float(min((e.decomposition_slack for e in logs if e.optimism_flag),
                                             default=math.inf)),
    }
    if config.uae:
        res.summary["mixture_suboptimality"] = mixture_suboptimality(mdp, policies, [e.x1 for e in logs])
    return res


def mixture_suboptimality(mdp: TabularMDP, policies: list[Policy], x1s: list[int]) -> float:
    """``V^pibar - V*`` for the uniform mixture over the played policies.

    Initial states follow ``d_1`` when the MDP has one and the empirical
    distribution of the observed schedule otherwise.
    """
    if mdp.initial_dist is not None:
        px = mdp.initial_dist
    else:
        px = np.bincount(x1s, minlength=mdp.n_states) / len(x1s)
    pi_star, _ = optimal_tables(mdp)
    v_star = float(px @ v_values(mdp, pi_star)[0])
    return float(np.mean([px @ v_values(mdp, p)[0] for p in policies]) - v_star)


# -- offline -----------------------------------------------------------------------

@dataclass
class OfflineRunResult:
    chosen: int
    policy: Policy
    pessimistic_values: list[float]
    pessimism_flags: list[bool]
    members: list[tuple]
    summary: dict = field(default_factory=dict)


def pdisco_run(mdp: TabularMDP, cls: FiniteClass, policies: list[Policy], data, config: OfflineRunConfig,
               nu: np.ndarray | None = None, comparator: int | None = None,
               rng: np.random.Generator | None = None) -> OfflineRunResult:
    """Pessimistic selection over ``policies`` from per-step datasets ``data``.

    Each policy gets its own confidence set under its Bellman operator; the
    pessimistic value is the largest ``E_{d_1} fbar_1(x_1, pi)`` in that set.
    With ``H = 1`` targets do not depend on the policy, so one set is shared.
    ``comparator`` defaults to the best policy in the class.
    """
    if not policies:
        raise ValueError("policy class is empty")
    if mdp.initial_dist is None:
        raise ValueError("offline evaluation needs an initial distribution")
    H, S, A, M = cls.horizon, cls.n_states, cls.n_actions, cls.grid_size
    n = cls.size()
    beta = _beta(config.beta, auto_beta_offline(H, len(policies), n, config.delta))
    data = [list(d) for d in data]
    counts = [rl_counts(d, S, A, M) for d in data]
    d1 = mdp.initial_dist
    fbar0 = cls.means(0)
    probs = np.stack([p.probs for p in policies])  # (n_pi, H, S, A)
    values = [float(d1 @ v_values(mdp, p)[0]) for p in policies]
    if H == 1:
        # targets ignore the policy: one confidence set, all policies scored at once
        cs = confset_from_logliks(step_logliks(cls, counts, "star", config.loss, rng, data), beta)
        if cs.empty:
            raise UnrealizableError("empty confidence set")
        tuples = np.array(cs.members)
        vals = np.einsum("msa,s,psa->pm", fbar0[tuples[:, 0]], d1, probs[:, 0])
        best = argmin_tol(-vals, axis=1)
        pess = [float(v) for v in vals[np.arange(len(policies)), best]]
        chosen_members = [tuple(int(i) for i in tuples[b]) for b in best]
    else:
        pess, chosen_members = [], []
        for j, pi in enumerate(policies):
            cs = confset_from_logliks(step_logliks(cls, counts, pi, config.loss, rng, data), beta)
            if cs.empty:
                raise UnrealizableError(f"policy {j}: empty confidence set")
            tuples = np.array(cs.members)
            v = (fbar0[tuples[:, 0]] * pi.probs[0][None]).sum(axis=2) @ d1
            b = int(argmin_tol(-v))
            pess.append(float(v[b]))
            chosen_members.append(tuple(int(i) for i in tuples[b]))
    flags = [bool(values[j] <= pess[j] + OPT_TOL) for j in range(len(policies))]
    chosen = int(argmin_tol(np.array(pess)))
    if comparator is None:
        comparator = int(argmin_tol(np.array(values)))
    pi_t = policies[comparator]
    pi_star, _ = optimal_tables(mdp)
    v_star = float(d1 @ v_values(mdp, pi_star)[0])
    f_t = _tables(cls, chosen_members[comparator])
    z_t = d1 @ np.einsum("sa,sam->sm", pi_t.probs[0], return_tables(mdp, pi_t)[0])
    var_t = float(variances(z_t))
    Delta_t = float(expected_delta(mdp, f_t, pi_t, d1).sum())
    subopt = values[chosen] - values[comparator]
    summary = {
        "config": {"N": config.N, "delta": config.delta, "beta": beta, "class_size": n, "H": H,
                   "n_policies": len(policies), "loss": config.loss},
        "chosen": chosen, "comparator": comparator,
        "v_chosen": values[chosen], "v_comparator": values[comparator], "v_star": v_star,
        "suboptimality": subopt, "suboptimality_vs_star": values[chosen] - v_star,
        "var_comparator": var_t, "Delta_comparator": Delta_t,
        "pessimism_all": bool(all(flags)),
        "decomposition_slack": offline_decomposition_bound(var_t, Delta_t, H) - subopt,
    }
    if nu is not None:
        c_t = concentrability(mdp, pi_t, nu, d1)
        nu_delta = float((np.asarray(nu) * delta_tables(mdp, f_t, pi_t)).sum())
        summary["concentrability"] = c_t
        summary["change_of_measure_slack"] = (c_t * nu_delta - Delta_t) if math.isfinite(c_t) else math.inf
    return OfflineRunResult(chosen, policies[chosen], pess, flags, chosen_members, summary)


def deterministic_policies(horizon: int, n_states: int, n_actions: int) -> list[Policy]:
    """All ``A^(H S)`` deterministic policies in lexicographic order."""
    out = []
    for acts in itertools.product(range(n_actions), repeat=horizon * n_states):
        out.append(Policy.deterministic(np.array(acts).reshape(horizon, n_states), n_actions))
    return out


# -- assumptions ----------------------------------------------------------------------

def bellman_completeness(mdp: TabularMDP, cls: FiniteClass, limit: int | None = COMPLETENESS_LIMIT,
                         atol: float = 1e-12) -> list[tuple] | None:
    """Check closure of the class under both distributional Bellman operators.

    Operators range over the optimality operator and every deterministic
    next-step action map. Returns the list of ``(h, member, operator)``
    failures, or ``None`` when the number of member-operator pairs exceeds
    ``limit`` (the check is skipped).
    """
    H, S, A = cls.horizon, cls.n_states, cls.n_actions
    maps = list(itertools.product(range(A), repeat=S))
    pairs = sum(len(cls.members[h + 1]) * (len(maps) + 1) for h in range(H - 1)) + 1
    if limit is not None and pairs > limit:
        return None
    bad = []

    def member_of(tab, h):
        return bool(np.any(np.all(np.abs(cls.stack(h) - tab[None]) <= atol, axis=(1, 2, 3))))

    if not member_of(mdp.C[H - 1], H - 1):
        bad.append((H - 1, None, "terminal"))
    for h in range(H - 1):
        for j, f_next in enumerate(cls.stack(h + 1)):
            greedy = argmin_tol(cls.means(h + 1)[j], axis=1)
            for op in ["star"] + maps:
                acts = greedy if op == "star" else np.array(op)
                y = f_next[np.arange(S), acts]
                if not member_of(bellman_arrays(mdp, h, y), h):
                    bad.append((h, j, op if op == "star" else tuple(op)))
    return bad


def realizable_cb(cls: FiniteClass, cost: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.any(np.all(np.abs(cls.stack(0) - np.asarray(cost)[None]) <= atol, axis=(1, 2, 3))))


# -- second-order implies first-order ---------------------------------------------------

def second_order_to_first_order(c: float, sum_v_star: float | None = None, c_prime: float | None = None,
                                v_comp: float | None = None, N: int | None = None) -> dict:
    """First-order bounds implied by second-order ones with constants ``c`` and ``c'``.

    Online: ``sqrt(2 c sum V*) + 3 c``. Offline: ``sqrt(c' V^comp / N) + c' / N``.
    """
    out = {}
    if c < 0 or (c_prime is not None and c_prime < 0):
        raise ValueError("constants must be nonnegative")
    if sum_v_star is not None:
        out["online"] = math.sqrt(2.0 * c * sum_v_star) + 3.0 * c
    if c_prime is not None and v_comp is not None and N:
        out["offline"] = math.sqrt(c_prime * v_comp / N) + c_prime / N
    return out


def second_order_online(c: float, sum_var: float) -> float:
    return math.sqrt(c * sum_var) + c


def implied_constant(regret: float, sum_var: float) -> float:
    """Smallest ``c`` with ``regret <= sqrt(c sum_var) + c``."""
    if regret <= 0:
        return 0.0
    s = (-math.sqrt(sum_var) + math.sqrt(sum_var + 4.0 * regret)) / 2.0
    return s * s

