import math

import numpy as np
import pytest

from distrl import library
from distrl.agents_cb import CBRunConfig, distucb_run
from distrl.agents_rl import (OfflineRunConfig, OnlineRunConfig, auto_beta_offline, auto_beta_online,
                              bellman_completeness, deterministic_policies, implied_constant, odisco_run,
                              pdisco_run, realizable_cb, second_order_online, second_order_to_first_order)
from distrl.env import Policy, TabularMDP, bellman_arrays, optimal_tables, return_tables, sample_episode, \
    sample_offline_dataset, v_values
from distrl.func_class import ClampError, CondDistTable, FiniteClass
import oracles


def small_class():
    """rl_small with three members per step: the truth, its Bellman image and two alternatives."""
    mdp, full = library.rl_small()
    last = [full.stack(1)[i] for i in range(3)]
    _, Z = optimal_tables(mdp)
    first = [Z[0]]
    for f in library.closure_step(mdp, 0, last[1:]):
        if len(first) < 3 and not any(np.array_equal(f, g) for g in first):
            first.append(f)
    cls = FiniteClass([[CondDistTable(t) for t in first], [CondDistTable(t) for t in last]])
    return mdp, cls


def det_mdp():
    M = 5
    P = np.zeros((2, 2, 2, 2))
    P[0, :, 0, 0] = 1
    P[0, :, 1, 1] = 1
    P[1, :, :, :] = np.eye(2)[:, None, :]
    C = np.zeros((2, 2, 2, M))
    C[0, :, 0, 1] = 1
    C[0, :, 1, 0] = 1
    C[1, 0, :, 1] = 1
    C[1, 1, :, 2] = 1
    return TabularMDP(P, C, initial_dist=[0.5, 0.5])


def test_deterministic_singleton_zero_regret():
    mdp = det_mdp()
    _, Z = optimal_tables(mdp)
    cls = FiniteClass([[CondDistTable(Z[0])], [CondDistTable(Z[1])]])
    for uae in (False, True):
        res = odisco_run(mdp, cls, OnlineRunConfig(K=20, uae=uae), np.random.default_rng(0))
        assert all(e.regret_inst == 0.0 for e in res.logs)


def test_h1_reduces_to_distucb():
    env, cls = library.cb_variance_scaled(0.25)
    K = 300
    a = distucb_run(env, cls, CBRunConfig(K=K), np.random.default_rng(8))
    b = odisco_run(env.as_mdp(), cls, OnlineRunConfig(K=K), np.random.default_rng(8))
    acts = [int(e.policy.actions()[0, e.x1]) for e in b.logs]
    assert acts == [e.a for e in a.logs]
    assert b.summary["regret_cum"] == pytest.approx(a.summary["regret_cum"])


def test_odisco_matches_reference():
    mdp, cls = small_class()
    K = 100
    beta = auto_beta_online(2, K, cls.size(), 0.1)
    res = odisco_run(mdp, cls, OnlineRunConfig(K=K), np.random.default_rng(17))
    members = [[cls.stack(h)[i] for i in range(cls.sizes()[h])] for h in range(2)]
    played, _ = oracles.odisco_reference(mdp, members, K, beta, np.random.default_rng(17), sample_episode)
    assert [e.member for e in res.logs] == played


def test_odisco_diagnostics_are_exact():
    mdp, cls = library.rl_small()
    res = odisco_run(mdp, cls, OnlineRunConfig(K=30), np.random.default_rng(4))
    pi_star, _ = optimal_tables(mdp)
    v_star = v_values(mdp, pi_star)[0]
    for e in res.logs:
        law = oracles.return_law(mdp, e.policy, 0, e.x1)
        assert e.var_Zk == pytest.approx(oracles.grid_var(law), abs=1e-12)
        assert e.regret_inst == pytest.approx(oracles.grid_mean(law) - v_star[e.x1], abs=1e-12)
        if e.optimism_flag:
            assert e.decomposition_slack >= -1e-9
    rows = list(res.rows())
    assert rows[-1][2] == pytest.approx(res.summary["regret_cum"])


def test_uae_mixture_suboptimality():
    mdp, cls = library.rl_small()
    res = odisco_run(mdp, cls, OnlineRunConfig(K=30, uae=True), np.random.default_rng(5))
    pols = [e.policy for e in res.logs]
    pi_star, _ = optimal_tables(mdp)
    expect = np.mean([mdp.initial_dist @ v_values(mdp, p)[0] for p in pols]) - mdp.initial_dist @ v_values(mdp, pi_star)[0]
    assert res.summary["mixture_suboptimality"] == pytest.approx(expect, abs=1e-12)
    assert res.summary["mixture_suboptimality"] >= -1e-12


def test_bellman_completeness():
    mdp, cls = library.rl_small()
    assert bellman_completeness(mdp, cls) == []
    _, trimmed = small_class()
    assert bellman_completeness(mdp, trimmed)
    assert bellman_completeness(mdp, cls, limit=1) is None


def test_pdisco_singleton_policy_class():
    mdp, cls = library.rl_small()
    pi = Policy.deterministic([[1, 0], [0, 1]], 2)
    data = sample_offline_dataset(mdp, np.full((2, 2, 2), 0.25), 50, np.random.default_rng(0))
    res = pdisco_run(mdp, cls, [pi], data, OfflineRunConfig(N=50))
    assert res.chosen == 0 and res.policy == pi


def test_pdisco_realizable_singleton_per_policy():
    mdp, _ = library.rl_small()
    pols = deterministic_policies(2, 2, 2)[:4]
    for pi in pols:
        Z = return_tables(mdp, pi)
        cls = FiniteClass([[CondDistTable(Z[0])], [CondDistTable(Z[1])]])
        data = sample_offline_dataset(mdp, np.full((2, 2, 2), 0.25), 30, np.random.default_rng(1))
        res = pdisco_run(mdp, cls, [pi], data, OfflineRunConfig(N=30))
        assert res.pessimistic_values[0] == pytest.approx(float(mdp.initial_dist @ v_values(mdp, pi)[0]), abs=1e-12)


def test_pdisco_matches_reference():
    env, cls = library.cb_variance_scaled(0.25)
    mdp = env.as_mdp()
    pols = deterministic_policies(1, 2, 2)[:2]
    N = 1000
    nu = np.full((1, 2, 2), 0.25)
    data = sample_offline_dataset(mdp, nu, N, np.random.default_rng(21))
    res = pdisco_run(mdp, cls, pols, data, OfflineRunConfig(N=N), nu=nu)
    beta = auto_beta_offline(1, 2, cls.size(), 0.1)
    members = [cls.stack(0)[i] for i in range(cls.size())]
    ref = oracles.pessimistic_values_reference(mdp, members, pols, data, beta)
    assert np.allclose(res.pessimistic_values, ref, atol=1e-12)
    chosen = min(range(2), key=lambda j: (ref[j], j))
    assert res.chosen == chosen
    vals = [sum(mdp.initial_dist[x] * p.probs[0, x, a] * oracles.grid_mean(mdp.C[0, x, a])
                for x in range(2) for a in range(2)) for p in pols]
    assert res.summary["suboptimality"] == pytest.approx(vals[chosen] - min(vals), abs=1e-12)


def test_pdisco_h2_diagnostics():
    mdp, cls = library.rl_small()
    nu = np.full((2, 2, 2), 0.25)
    data = sample_offline_dataset(mdp, nu, 200, np.random.default_rng(9))
    res = pdisco_run(mdp, cls, deterministic_policies(2, 2, 2), data, OfflineRunConfig(N=200), nu=nu)
    s = res.summary
    assert s["pessimism_all"]
    assert s["decomposition_slack"] >= -1e-9 and s["change_of_measure_slack"] >= -1e-9
    d = oracles.occupancy(mdp, deterministic_policies(2, 2, 2)[s["comparator"]])
    assert s["concentrability"] == pytest.approx(d.max() / 0.25, abs=1e-12)
    with pytest.raises(ValueError):
        pdisco_run(mdp, cls, [], data, OfflineRunConfig(N=200))


def test_second_order_to_first_order_examples():
    assert second_order_to_first_order(0.0, sum_v_star=7.0)["online"] == 0.0
    assert second_order_to_first_order(2.0, sum_v_star=0.0)["online"] == 6.0
    assert second_order_to_first_order(1.0, sum_v_star=2.0)["online"] == 5.0
    off = second_order_to_first_order(0.0, c_prime=4.0, v_comp=0.25, N=16)
    assert off["offline"] == pytest.approx(math.sqrt(4 * 0.25 / 16) + 4 / 16)
    with pytest.raises(ValueError):
        second_order_to_first_order(-1.0, sum_v_star=1.0)


def test_implied_constant_inverts_bound():
    rng = np.random.default_rng(0)
    for _ in range(200):
        R, V = rng.random() * 50, rng.random() * 100
        c = implied_constant(R, V)
        assert second_order_online(c, V) == pytest.approx(R, rel=1e-9, abs=1e-12)
    assert implied_constant(0.0, 3.0) == 0.0


def test_realizable_cb():
    env, cls = library.cb_gap()
    assert realizable_cb(cls, env.C)
    assert not realizable_cb(FiniteClass.single_step([cls[0, 1]]), env.C)


def test_bellman_arrays_reject_overflow():
    mdp, _ = library.rl_small()
    y = np.zeros((2, 5))
    y[:, 4] = 1
    with pytest.raises(ClampError):
        bellman_arrays(mdp, 0, y)
