import numpy as np
import pytest

from distrl import library
from distrl.dist import GridDist
from distrl.env import (CBEnv, CertificateError, Policy, TabularMDP, bellman_dist_pi, bellman_dist_star,
                        concentrability, occupancy, optimal_tables, return_distribution, return_tables,
                        sample_episode, sample_offline_dataset, v_values, value)
from distrl.func_class import ClampError, SampleCB
import oracles


def chain():
    """Deterministic two-step chain with costs 0.25 then 0.5."""
    M = 5
    P = np.zeros((2, 1, 1, 1))
    P[..., 0] = 1
    C = np.zeros((2, 1, 1, M))
    C[0, 0, 0, 1] = 1
    C[1, 0, 0, 2] = 1
    return TabularMDP(P, C, initial_dist=[1.0])


def coin_mdp(M=3):
    """Two states, two actions, uniform transitions, Bernoulli costs on the first two grid points."""
    P = np.full((2, 2, 2, 2), 0.5)
    C = np.zeros((2, 2, 2, M))
    for h in range(2):
        for x in range(2):
            for a in range(2):
                p = 0.2 + 0.2 * a + 0.1 * x + 0.05 * h
                C[h, x, a, 0], C[h, x, a, 1] = 1 - p, p
    return TabularMDP(P, C, initial_dist=[0.3, 0.7])


def test_certificate():
    M = 3
    P = np.ones((2, 1, 1, 1))
    C = np.zeros((2, 1, 1, M))
    C[:, 0, 0, 2] = 1.0
    with pytest.raises(CertificateError):
        TabularMDP(P, C)
    with pytest.raises(ValueError):
        TabularMDP(np.full((1, 1, 1, 1), 0.5), C[:1])


def test_return_distribution_examples():
    mdp = chain()
    pi = Policy.uniform(2, 1, 1)
    assert return_distribution(mdp, pi, 0, 0) == GridDist.point(5, 3)
    env, _ = library.cb_gap()
    cb = env.as_mdp()
    law = return_distribution(cb, Policy.deterministic([[0]], 2), 0, 0)
    assert law.allclose(GridDist(env.C[0, 0]))


def test_two_step_stochastic_matches_enumeration():
    mdp = coin_mdp()
    for pi in (Policy.uniform(2, 2, 2), Policy.deterministic([[0, 1], [1, 0]], 2)):
        for x in range(2):
            got = return_distribution(mdp, pi, 0, x).masses
            assert np.allclose(got, oracles.return_law(mdp, pi, 0, x), atol=1e-12, rtol=0)
        assert np.allclose(occupancy(mdp, pi), oracles.occupancy(mdp, pi), atol=1e-12, rtol=0)


def test_bellman_terminal_and_examples():
    mdp = coin_mdp()
    pi = Policy.uniform(2, 2, 2)
    assert np.array_equal(bellman_dist_pi(mdp, None, pi, 1).masses, mdp.C[1])
    assert np.array_equal(bellman_dist_star(mdp, None, 1).masses, mdp.C[1])
    f_next = mdp.C[1]
    got = bellman_dist_pi(mdp, f_next, pi, 0).masses
    assert np.allclose(got, oracles.bellman(mdp, f_next, 0, pi.probs[1]), atol=1e-12, rtol=0)


def test_bellman_star_equals_greedy_pi():
    mdp = coin_mdp()
    f_next = mdp.C[1]
    greedy = oracles.greedy_action_probs(f_next)
    pi = Policy(np.stack([np.full((2, 2), 0.5), np.array(greedy)]))
    assert np.allclose(bellman_dist_star(mdp, f_next, 0).masses, bellman_dist_pi(mdp, f_next, pi, 0).masses)


def test_bellman_star_tie_goes_to_lowest_action():
    mdp = coin_mdp(M=5)
    f_next = np.zeros((2, 2, 5))
    f_next[:, 0] = [0.5, 0, 0.5, 0, 0]  # mean 0.25
    f_next[:, 1] = [0, 1, 0, 0, 0]      # mean 0.25, different law
    pi0 = Policy(np.stack([np.full((2, 2), 0.5), np.array([[1.0, 0], [1.0, 0]])]))
    pi1 = Policy(np.stack([np.full((2, 2), 0.5), np.array([[0, 1.0], [0, 1.0]])]))
    star = bellman_dist_star(mdp, f_next, 0).masses
    assert np.array_equal(star, bellman_dist_pi(mdp, f_next, pi0, 0).masses)
    assert not np.array_equal(star, bellman_dist_pi(mdp, f_next, pi1, 0).masses)


def test_bellman_clamp_error():
    mdp = coin_mdp()
    f_next = np.zeros((2, 2, 3))
    f_next[..., 2] = 1.0
    with pytest.raises(ClampError):
        bellman_dist_pi(mdp, f_next, Policy.uniform(2, 2, 2), 0)


def test_occupancy_examples():
    env, _ = library.cb_gap()
    cb = env.as_mdp()
    d = occupancy(cb, Policy.deterministic([[1]], 2), 0)
    assert d[0, 0, 1] == 1.0 and d.sum() == 1.0
    P = np.ones((2, 1, 2, 1))
    C = np.zeros((2, 1, 2, 3))
    C[..., 0] = 1
    mdp = TabularMDP(P, C, initial_dist=[1.0])
    assert np.all(occupancy(mdp, Policy.uniform(2, 1, 2)) == 0.5)


def test_concentrability_examples():
    mdp = coin_mdp()
    pi = Policy.deterministic([[0, 1], [1, 0]], 2)
    d = occupancy(mdp, pi)
    assert concentrability(mdp, pi, d) == pytest.approx(1.0)
    P = np.ones((1, 1, 2, 1))
    C = np.zeros((1, 1, 2, 2))
    C[..., 0] = 1
    one = TabularMDP(P, C, initial_dist=[1.0])
    assert concentrability(one, Policy.deterministic([[0]], 2), np.full((1, 1, 2), 0.5)) == 2.0
    assert concentrability(one, Policy.deterministic([[0]], 2), np.array([[[0.0, 1.0]]])) == np.inf


def test_optimal_policy_beats_all_deterministic():
    mdp = coin_mdp()
    pi_star, Z = optimal_tables(mdp)
    v_star = v_values(mdp, pi_star)[0]
    from distrl.agents_rl import deterministic_policies
    for pi in deterministic_policies(2, 2, 2):
        assert np.all(v_values(mdp, pi)[0] >= v_star - 1e-12)
    assert np.allclose(Z[1], return_tables(mdp, pi_star)[1])


def test_sample_episode():
    mdp = chain()
    pi = Policy.uniform(2, 1, 1)
    a = sample_episode(mdp, pi, np.random.default_rng(1))
    b = sample_episode(mdp, pi, np.random.default_rng(2))
    assert a == b and a[-1].x_next is None
    env = CBEnv(library.cb_gap()[0].C)
    (s,) = sample_episode(env, Policy.uniform(1, 1, 2), np.random.default_rng(0))
    assert isinstance(s, SampleCB)
    mdp = coin_mdp()
    pi = Policy.uniform(2, 2, 2)
    assert sample_episode(mdp, pi, np.random.default_rng(7)) == sample_episode(mdp, pi, np.random.default_rng(7))


def test_offline_dataset():
    mdp = coin_mdp()
    nu = np.full((2, 2, 2), 0.25)
    assert sample_offline_dataset(mdp, nu, 0, np.random.default_rng(0)) == [[], []]
    det = chain()
    data = sample_offline_dataset(det, np.ones((2, 1, 1)), 5, np.random.default_rng(0))
    assert len(set(data[0])) == 1 and len(data[0]) == 5
    nu = np.array([[[0.1, 0.2], [0.3, 0.4]], [[0.4, 0.3], [0.2, 0.1]]])
    N = 10_000
    data = sample_offline_dataset(mdp, nu, N, np.random.default_rng(3))
    for h in range(2):
        freq = np.zeros((2, 2))
        for s in data[h]:
            freq[s.x, s.a] += 1
        sd = np.sqrt(nu[h] * (1 - nu[h]) / N)
        assert np.all(np.abs(freq / N - nu[h]) <= 3 * sd)
    with pytest.raises(ValueError):
        sample_offline_dataset(mdp, np.ones((2, 2, 2)), 3, np.random.default_rng(0))


def test_cb_env():
    env = CBEnv(library.cb_gap()[0].C, context_sequence=[0, 0])
    assert env.context(5, None) == 0
    assert np.allclose(env.means(), [[0.2, 0.5]])
    assert value(env.as_mdp(), Policy.deterministic([[0]], 2), 0) == pytest.approx(0.2)
