import math

import numpy as np
import pytest

from distrl.dist import GridDist
from distrl.func_class import (ClampError, CondDistTable, FiniteClass, SampleCB, SampleRL, confset_cb, confset_rl,
                               loglik_cb, loglik_rl, mass_floor_violations, rl_target, sampled_target_counts,
                               width)


def single(masses, id=None):
    return CondDistTable(np.array(masses, dtype=float).reshape(1, 1, -1), id=id)


def test_loglik_cb_examples():
    assert loglik_cb(single([0, 1, 0]), [SampleCB(0, 0, 1)]) == 0.0
    assert loglik_cb(single([1, 0, 0]), [SampleCB(0, 0, 1)]) == -math.inf
    assert loglik_cb(single([0.5, 0.5, 0]), [SampleCB(0, 0, 1)] * 2) == pytest.approx(-1.386294, abs=1e-6)
    assert loglik_cb(single([0.5, 0.5, 0]), []) == 0.0


def test_table_validation():
    with pytest.raises(ValueError):
        CondDistTable(np.ones((1, 1, 3)))
    with pytest.raises(ValueError):
        CondDistTable(np.ones((1, 3)))
    with pytest.raises(ValueError):
        FiniteClass([[single([1, 0]), single([1, 0, 0])]])
    with pytest.raises(ValueError):
        FiniteClass([[]])


def _cb_class():
    return FiniteClass.single_step([single([0.5, 0.5, 0], "a"), single([0.2, 0.8, 0], "b"),
                                    single([0, 0, 1], "c")])


def test_confset_cb_examples():
    cls = _cb_class()
    data = [SampleCB(0, 0, 1)] * 3
    assert confset_cb(cls, data, 0.0).members == (1,)
    assert confset_cb(cls, data, 100.0).members == (0, 1)  # the -inf member never enters
    assert confset_cb(cls, [], 0.0).members == (0, 1, 2)


def test_confset_nested_in_beta():
    cls = _cb_class()
    data = [SampleCB(0, 0, 1), SampleCB(0, 0, 0), SampleCB(0, 0, 1)]
    sets = [confset_cb(cls, data, b) for b in (0.0, 0.1, 0.5, 1.0, 5.0)]
    for small, big in zip(sets, sets[1:]):
        assert small.issubset(big)


def test_confset_degenerate_when_all_zero():
    cls = FiniteClass.single_step([single([1, 0]), single([1, 0])])
    cs = confset_cb(cls, [SampleCB(0, 0, 1)], 0.0)
    assert cs.degenerate and cs.members == (0, 1)


def test_rl_target_examples():
    M = 5
    assert rl_target(None, SampleRL(0, 0, 0, 1, None), grid_size=M) == GridDist.point(M, 1)
    f_next = CondDistTable(np.eye(M)[[2]].reshape(1, 1, M))
    assert rl_target(f_next, SampleRL(0, 0, 0, 1, 0)) == GridDist.point(M, 3)
    f_next = CondDistTable(np.array([0.5, 0, 0.5, 0, 0]).reshape(1, 1, M))
    out = rl_target(f_next, SampleRL(0, 0, 0, 2, 0))
    assert out.allclose(GridDist.from_points(M, {0.5: 0.5, 1.0: 0.5}))
    with pytest.raises(ClampError):
        rl_target(f_next, SampleRL(0, 0, 0, 3, 0))
    with pytest.raises(ValueError):
        rl_target(None, SampleRL(0, 0, 0, 1, None))


def test_loglik_rl_examples():
    M = 5
    point = CondDistTable(np.eye(M)[[1]].reshape(1, 1, M))
    assert loglik_rl(CondDistTable(np.eye(M)[[3]].reshape(1, 1, M)), CondDistTable(np.eye(M)[[2]].reshape(1, 1, M)),
                     [SampleRL(0, 0, 0, 1, 0)]) == 0.0
    assert loglik_rl(point, None, []) == 0.0
    f_next = CondDistTable(np.array([0.5, 0, 0.5, 0, 0]).reshape(1, 1, M))
    f_h = CondDistTable(np.array([0, 0, 0.5, 0, 0.5]).reshape(1, 1, M))
    ll = loglik_rl(f_h, f_next, [SampleRL(0, 0, 0, 2, 0)])
    assert ll == pytest.approx(math.log(0.5), abs=1e-12)
    assert ll == pytest.approx(-0.693147, abs=1e-6)


def test_sampled_loss_draws_from_target():
    M = 5
    y = np.array([[0.5, 0, 0.5, 0, 0]])
    data = [SampleRL(0, 0, 0, 2, 0)] * 4000
    w = sampled_target_counts(data, y, 1, 1, M, np.random.default_rng(0))
    assert w.sum() == 4000 and set(np.flatnonzero(w[0, 0])) == {2, 4}
    assert abs(w[0, 0, 2] / 4000 - 0.5) < 0.03


def test_confset_rl_reductions():
    cls = _cb_class()
    data = [SampleCB(0, 0, 1), SampleCB(0, 0, 0)]
    rl_data = [[SampleRL(0, s.x, s.a, s.c, None) for s in data]]
    for beta in (0.0, 0.3, 2.0):
        assert [m[0] for m in confset_rl(cls, rl_data, beta).members] == list(confset_cb(cls, data, beta).members)
    two = FiniteClass([[single([0, 0, 1]), single([0, 1, 0])], [single([1, 0, 0]), single([0, 1, 0])]])
    assert len(confset_rl(two, [[], []], 0.0)) == 4
    wide = FiniteClass([[single([0.2, 0.3, 0.5]), single([0.4, 0.4, 0.2])], [single([0.6, 0.4, 0]), single([0.1, 0.9, 0])]])
    assert len(confset_rl(wide, [[SampleRL(0, 0, 0, 1, 0)], [SampleRL(1, 0, 0, 0, None)]], 1e6)) == 4
    solo = FiniteClass([[single([0, 0, 1])], [single([0, 1, 0])]])
    assert confset_rl(solo, [[SampleRL(0, 0, 0, 0, 0)], [SampleRL(1, 0, 0, 1, None)]], 0.0).members == ((0, 0),)


def test_confset_rl_couples_steps():
    # step-0 member 0 is the Bellman image of step-1 member 0 only
    cls = FiniteClass([[single([0, 1, 0]), single([0, 0, 1])], [single([1, 0, 0]), single([0, 1, 0])]])
    data = [[SampleRL(0, 0, 0, 1, 0)], []]
    assert confset_rl(cls, data, 0.0).members == ((0, 0), (1, 1))
    with pytest.raises(ValueError):
        confset_rl(cls, data, -1.0)


def test_width_examples():
    cls = FiniteClass.single_step([single([0, 0, 0.5, 0, 0.5, 0, 0, 0, 0, 0, 0]),
                                   single([0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]),
                                   single([0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0])])
    assert width([1], cls, 0, 0) == 0.0
    assert width([1, 2], cls, 0, 0) == pytest.approx(0.2)
    assert width([0, 1], cls, 0, 0) == pytest.approx(0.0, abs=1e-15)  # different laws, same mean
    with pytest.raises(ValueError):
        width([], cls, 0, 0)


def test_mass_floor_violations():
    cls = FiniteClass.single_step([single([0.99, 0.01]), single([0.5, 0.5])])
    assert mass_floor_violations(cls, 0.05) == [(0, 0, 0, 0)]
    assert mass_floor_violations(cls, 0.001) == []
