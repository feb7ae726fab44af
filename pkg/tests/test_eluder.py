import itertools

import numpy as np
import pytest

from distrl import library
from distrl.agents_rl import deterministic_policies
from distrl.eluder import (EluderGuardError, EluderInstance, build_cb_instance, build_rl_instance, default_epsilon0,
                           eluder_dim, rl_eluder_dim)
from distrl.env import optimal_tables
from distrl.func_class import CondDistTable, FiniteClass
import oracles


def inst(values, dists, eps0):
    return EluderInstance(np.array(values, dtype=float), np.array(dists, dtype=float), eps0)


def test_zero_class_has_dimension_zero():
    assert eluder_dim(inst([[0.0, 0.0]], np.eye(2), 0.01)).dimension == 0


def test_single_function_single_distribution():
    res = eluder_dim(inst([[1.0]], [[1.0]], 0.5))
    assert res.dimension == 1 and res.sequence == ((0, 0),)


def test_two_function_two_point():
    assert eluder_dim(inst(np.eye(2), np.eye(2), 0.5)).dimension == 2
    res = eluder_dim(inst([[0.6, 0.6], [0.3, 0.9]], np.eye(2), 0.1))
    assert res.dimension == 2 and res.epsilon == pytest.approx(0.3)


def test_partial_sum_binds():
    # Two one-point functions open the sequence; the third term needs eps >= 1/8 + 1/8, a partial sum
    # that is not itself a value of any |E_d f|. Searching realized values alone would stop at 2.
    values = [[3 / 8, 0, 0], [0, 3 / 8, 0], [1 / 8, 1 / 8, 5 / 8]]
    res = eluder_dim(inst(values, np.eye(3), 3 / 16))
    assert res.dimension == 3 and res.epsilon == pytest.approx(0.25)
    assert oracles.eluder_bruteforce(values, np.eye(3), 3 / 16, 4) == 3


def test_guard():
    with pytest.raises(EluderGuardError):
        eluder_dim(inst(np.eye(13), np.eye(13), 0.1))
    with pytest.raises(ValueError):
        inst([[1.0]], [[0.5]], 0.1)
    with pytest.raises(ValueError):
        inst([[1.0]], [[1.0]], 0.0)


def test_default_threshold_is_one_over_k():
    assert default_epsilon0(250) == 1 / 250
    env, cls = library.cb_gap()
    assert build_cb_instance(cls, env.C, K=400).epsilon0 == 1 / 400
    with pytest.raises(ValueError):
        build_cb_instance(cls, env.C)


def test_matches_definitional_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(60):
        nf, npts = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        # dyadic values keep every sum exact, so interval endpoints compare without rounding
        values = rng.integers(0, 9, size=(nf, npts)) / 8 * (rng.random((nf, npts)) < 0.7)
        if rng.random() < 0.5:
            dists = np.eye(npts)
        else:
            dists = rng.multinomial(4, np.ones(npts) / npts, size=int(rng.integers(1, 4))) / 4
        eps0 = float(rng.choice([1 / 16, 1 / 8, 5 / 16]))
        got = eluder_dim(inst(values, dists, eps0)).dimension
        assert got == oracles.eluder_bruteforce(values, dists, eps0, nf + 1)


def test_monotone_in_threshold_and_class():
    rng = np.random.default_rng(1)
    for _ in range(30):
        values = rng.random((3, 3)) * (rng.random((3, 3)) < 0.6)
        dims = [eluder_dim(inst(values, np.eye(3), e)).dimension for e in (0.01, 0.1, 0.3, 0.6)]
        assert dims == sorted(dims, reverse=True)
        assert eluder_dim(inst(values[:2], np.eye(3), 0.1)).dimension <= dims[1]


def test_order_independent():
    rng = np.random.default_rng(2)
    for _ in range(20):
        values = rng.random((3, 3)) * (rng.random((3, 3)) < 0.6)
        dists = rng.dirichlet(np.ones(3), size=3)
        base = eluder_dim(inst(values, dists, 0.1)).dimension
        for pf, pd in zip(itertools.permutations(range(3)), itertools.permutations(range(3))):
            assert eluder_dim(inst(values[list(pf)], dists[list(pd)], 0.1)).dimension == base


def test_cb_instances():
    env, cls = library.cb_gap()
    truth = FiniteClass.single_step([cls[0, 0]])
    assert eluder_dim(build_cb_instance(truth, env.C, epsilon0=0.01)).dimension == 0
    pair = FiniteClass.single_step([cls[0, 0], cls[0, 1]])
    built = build_cb_instance(pair, env.C, epsilon0=0.01)
    assert np.count_nonzero(np.abs(built.values).sum(axis=1)) == 1


def test_rl_reduction_matches_cb():
    env, cls = library.cb_gap()  # a single context
    mdp = env.as_mdp()
    pols = deterministic_policies(1, 1, 2)
    for eps0 in (0.01, 0.1, 0.5):
        cb = eluder_dim(build_cb_instance(cls, env.C, epsilon0=eps0)).dimension
        rl = eluder_dim(build_rl_instance(cls, mdp, pols, 0, "Q", epsilon0=eps0, x1=0)).dimension
        assert cb == rl


def test_rl_singleton_complete_class():
    mdp, _ = library.rl_small()
    _, Z = optimal_tables(mdp)
    cls = FiniteClass([[CondDistTable(Z[0])], [CondDistTable(Z[1])]])
    pols = deterministic_policies(2, 2, 2)[:6]
    assert rl_eluder_dim(cls, mdp, pols, "Q", epsilon0=0.01) == 0
    assert rl_eluder_dim(cls, mdp, pols, "V", epsilon0=0.01) == 0


def test_rl_two_policy_two_state_by_hand():
    mdp, cls = library.rl_small()
    pols = deterministic_policies(2, 2, 2)[:2]
    for h in range(2):
        built = build_rl_instance(cls, mdp, pols, h, "Q", epsilon0=0.05)
        assert eluder_dim(built).dimension == oracles.eluder_bruteforce(built.values, built.dists, 0.05, 3)
