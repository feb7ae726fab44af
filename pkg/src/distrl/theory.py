"""Exact evaluation of the RL identities and inequalities behind the regret proofs.

``f`` is always a list of ``H`` mass arrays of shape ``(S, A, M)``, one per
step, and ``pi`` a :class:`~distrl.env.Policy`. Steps are 0-based, so the
horizon factor ``H - h + 1`` of the 1-based statement becomes ``H - h``.
"""
from __future__ import annotations

import math

import numpy as np

from .dist import means, td, variances
from .env import Policy, TabularMDP, _x1_probs, bellman_arrays, occupancy, q_values, return_tables, v_values

TWO_E = 2.0 * math.e


def _pi_images(mdp: TabularMDP, f, pi: Policy) -> list[np.ndarray]:
    """``T_h^{pi,D} f_{h+1}`` for every step."""
    H = mdp.horizon
    out = []
    for h in range(H):
        y = None if h == H - 1 else np.einsum("sa,sam->sm", pi.probs[h + 1], f[h + 1])
        out.append(bellman_arrays(mdp, h, y))
    return out


def delta_tables(mdp: TabularMDP, f, pi: Policy) -> np.ndarray:
    """``delta_h(x, a) = D(f_h(x, a) || T_h^{pi,D} f_{h+1}(x, a))``, shape ``(H, S, A)``."""
    return np.stack([td(fh, th) for fh, th in zip(f, _pi_images(mdp, f, pi))])


def future_sum(mdp: TabularMDP, pi: Policy, per_step: np.ndarray) -> np.ndarray:
    """``sum_{t >= h} E_{pi, x_h, a_h}[per_step_t(x_t, a_t)]`` for every ``(h, x, a)``."""
    H = mdp.horizon
    out = np.array(per_step, dtype=float)
    for h in reversed(range(H - 1)):
        v_next = (pi.probs[h + 1] * out[h + 1]).sum(axis=1)
        out[h] = out[h] + mdp.P[h] @ v_next
    return out


def Delta_tables(mdp: TabularMDP, f, pi: Policy) -> np.ndarray:
    """``Delta_h(x, a)``: expected future sum of ``delta`` from ``(x_h, a_h)``."""
    return future_sum(mdp, pi, delta_tables(mdp, f, pi))


def expected_delta(mdp: TabularMDP, f, pi: Policy, x1=None) -> np.ndarray:
    """``E_{pi, x1}[delta_h(x_h, a_h)]`` per step."""
    d = occupancy(mdp, pi, x1)
    return (d * delta_tables(mdp, f, pi)).sum(axis=(1, 2))


def performance_difference(mdp: TabularMDP, f, pi: Policy, x1=None) -> tuple[float, float]:
    """Both sides of ``V^pi(x1) - fbar_1(x1, pi) = sum_h E_pi[(T_h^pi fbar_{h+1} - fbar_h)(x_h, a_h)]``."""
    px = _x1_probs(mdp, x1)
    fbar = [means(fh) for fh in f]
    lhs = float(px @ v_values(mdp, pi)[0] - px @ (pi.probs[0] * fbar[0]).sum(axis=1))
    images = _pi_images(mdp, f, pi)
    d = occupancy(mdp, pi, px)
    rhs = float(sum((d[h] * (means(images[h]) - fbar[h])).sum() for h in range(mdp.horizon)))
    return lhs, rhs


def conditional_variances(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """``Var(c_h + V^pi_{h+1}(x') | x_h, a_h)`` for every ``(h, x, a)``."""
    H, S, A, M = mdp.C.shape
    V = v_values(mdp, pi)
    cv = variances(mdp.C)
    out = np.array(cv)
    for h in range(H - 1):
        ev = mdp.P[h] @ V[h + 1]
        ev2 = mdp.P[h] @ (V[h + 1] ** 2)
        out[h] = cv[h] + (ev2 - ev ** 2)
    return np.maximum(out, 0.0)


def action_variances(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """``Var_{a ~ pi_h(x)}(Q_h^pi(x, a))`` per ``(h, x)``; zero for deterministic policies."""
    Q = q_values(mdp, pi)
    m = (pi.probs * Q).sum(axis=2)
    return np.maximum((pi.probs * Q ** 2).sum(axis=2) - m ** 2, 0.0)


def total_variance(mdp: TabularMDP, pi: Policy, x1=None) -> tuple[float, float]:
    """``Var(Z^pi(x1))`` computed directly and by the law of total variance.

    The decomposition sums, over steps, the expected conditional variance of
    ``c_h + V_{h+1}(x')`` plus the variance of ``Q_h`` over ``a ~ pi_h``. The
    second term vanishes for deterministic policies, and a random initial
    state contributes ``Var_{x1}(V_1(x1))``.
    """
    px = _x1_probs(mdp, x1)
    Z0 = return_tables(mdp, pi)[0]
    law = px @ np.einsum("sa,sam->sm", pi.probs[0], Z0)
    direct = float(variances(law))
    d = occupancy(mdp, pi, px)
    s_h = d.sum(axis=2)
    V1 = v_values(mdp, pi)[0]
    decomposed = float((d * conditional_variances(mdp, pi)).sum()
                       + (s_h * action_variances(mdp, pi)).sum()
                       + px @ V1 ** 2 - (px @ V1) ** 2)
    return direct, decomposed


def change_of_variance_slack(mdp: TabularMDP, f, pi: Policy) -> np.ndarray:
    """Pointwise slack of ``Var f_h(x,a) <= 2e Var Z_h^pi(x,a) + 12 H (H - h) Delta_h(x,a)``."""
    H = mdp.horizon
    Z = return_tables(mdp, pi)
    Dl = Delta_tables(mdp, f, pi)
    out = np.empty(Dl.shape)
    for h in range(H):
        rhs = TWO_E * variances(Z[h]) + 12.0 * H * (H - h) * Dl[h]
        out[h] = rhs - variances(f[h])
    return out


def change_of_variance_top_slack(mdp: TabularMDP, f, pi: Policy, x1: int) -> np.ndarray:
    """Per-step slack of ``E_pi[Var f_h] <= 2e Var Z^pi(x1) + 12 H^2 E_pi[Delta_h]`` from a fixed ``x1``."""
    H = mdp.horizon
    d = occupancy(mdp, pi, x1)
    Dl = Delta_tables(mdp, f, pi)
    var_z = variances(np.einsum("a,am->m", pi.probs[0, x1], return_tables(mdp, pi)[0][x1]))
    return np.array([TWO_E * var_z + 12.0 * H * H * (d[h] * Dl[h]).sum() - (d[h] * variances(f[h])).sum()
                     for h in range(H)])


def online_decomposition_bound(var_z: float, Delta: float, H: int) -> float:
    """``4 sqrt((2e Var + 12 H^2 Delta) H Delta) + 5 H Delta``."""
    return 4.0 * math.sqrt(max(TWO_E * var_z + 12.0 * H * H * Delta, 0.0) * H * Delta) + 5.0 * H * Delta


def offline_decomposition_bound(var_z: float, Delta: float, H: int) -> float:
    """``4 sqrt(2e Var H Delta) + (4 sqrt(12) + 5) H^1.5 Delta``."""
    return 4.0 * math.sqrt(max(TWO_E * var_z * H * Delta, 0.0)) + (4.0 * math.sqrt(12.0) + 5.0) * H ** 1.5 * Delta
