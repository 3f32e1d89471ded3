import itertools
import math

import numpy as np
import pytest

from dpotsim import theory as th
from dpotsim.errors import ConfigError, ShapeError, UndefinedSimilarityError


def _hand():
    # y = x0 + x1; benign target 1.1, backdoor target 1.5
    return th.LinRegInstance(np.array([0.2, 0.8]), np.array([[1.0], [1.0]]), np.array([1.1]), np.array([1.5]))


def test_hand_instance_all_checks():
    inst = _hand()
    mask = np.array([1.0, 0.0])
    values, loss = th.optimal_values(inst, mask)
    assert values[0] == pytest.approx(0.7) and loss == pytest.approx(0.0, abs=1e-24)
    res = th.check_instance(inst, mask, np.array([0.1, 0.1]), np.array([[0.0, 0.0], [1.0, 1.0]]), k_subset=1)
    assert res["residual_before"] == pytest.approx(0.5)
    assert res["residual_after"] == pytest.approx(0.0, abs=1e-12)
    assert res["cos_opt"] == pytest.approx(1.0)
    # random v = 0.1: G = [-0.08, -0.56] against g_bn = [-0.04, -0.16]
    assert res["cos_random"] == pytest.approx(0.0928 / (math.hypot(0.04, 0.16) * math.hypot(0.08, 0.56)))
    assert all(res[p] for p in th.PROPS)


def test_box_clamp_hand_case():
    inst = th.LinRegInstance([0.5, 0.5], [[1.0], [1.0]], [0.9], [0.2])
    values, loss = th.optimal_values(inst, [1, 0])
    assert values.tolist() == [0.0, 0.5]  # unconstrained optimum -0.3 clamps to 0
    assert loss == pytest.approx(0.09)


def test_embed_algebra(rng):
    x = rng.uniform(size=6)
    v = rng.uniform(size=6)
    assert np.array_equal(th.embed(x, th.DiagTrigger(np.zeros(6), v)), x)
    assert np.array_equal(th.embed(x, th.DiagTrigger(np.ones(6), v)), v)
    t = th.DiagTrigger(rng.integers(0, 2, 6), v)
    once = th.embed(x, t)
    assert np.array_equal(th.embed(once, t), once)
    hand = th.embed(np.array([0.1, 0.2, 0.3]), th.DiagTrigger([0, 1, 0], [0, 0.9, 0]))
    assert hand.tolist() == [0.1, 0.9, 0.3]
    with pytest.raises(ShapeError):
        th.embed(x[:3], t)


def test_distance_identity(rng):
    for _ in range(50):
        inst = th.random_instance(rng, alpha=rng.uniform(0.05, 0.95))
        t = th.DiagTrigger(th.random_mask(rng, inst.n, 3), rng.uniform(size=inst.n))
        r = inst.alpha / (1 - inst.alpha)
        gb, gd = th.grad_benign(inst), th.grad_backdoor(inst, t)
        lhs = np.linalg.norm(gb - (gb + r * gd))
        assert lhs == pytest.approx(r * np.linalg.norm(gd), rel=1e-12)


def test_gradients_match_finite_differences(rng):
    inst = th.random_instance(rng)
    t = th.DiagTrigger(th.random_mask(rng, inst.n, 3), rng.uniform(size=inst.n))
    h = 1e-6
    g = th.grad_backdoor(inst, t)
    for i, j in itertools.product(range(inst.n), range(inst.beta.shape[1])):
        b = inst.beta.copy()
        b[i, j] += h
        up = th.backdoor_loss(th.LinRegInstance(inst.x, b, inst.y_hat, inst.y_t), t)
        b[i, j] -= 2 * h
        dn = th.backdoor_loss(th.LinRegInstance(inst.x, b, inst.y_hat, inst.y_t), t)
        assert (up - dn) / (2 * h) == pytest.approx(g[i, j], rel=1e-6, abs=1e-9)


def test_optimal_values_beat_grid_and_start(rng):
    grid = np.linspace(0, 1, 101)
    for _ in range(20):
        inst = th.random_instance(rng)
        mask = th.random_mask(rng, inst.n, 2)
        _, loss = th.optimal_values(inst, mask)
        start = th.backdoor_loss(inst, th.DiagTrigger(mask, inst.x))
        assert loss <= start + 1e-12
        idx = np.flatnonzero(mask)
        best = min(th.backdoor_loss(inst, th.DiagTrigger(mask, _put(inst.x, idx, (a, b))))
                   for a in grid for b in grid)
        assert loss <= best + 1e-12


def _put(x, idx, vals):
    out = x.copy()
    out[idx] = vals
    return out


def test_brute_force_subset_is_the_minimum(rng):
    inst = th.random_instance(rng, n=6)
    best = th.brute_force_best_subset(inst, 2)
    losses = []
    for s in itertools.combinations(range(6), 2):
        m = np.zeros(6)
        m[list(s)] = 1
        losses.append(th.optimal_values(inst, m)[1])
    assert best.loss == min(losses)
    with pytest.raises(ConfigError):
        th.brute_force_best_subset(inst, 7)


def test_cos_sim_zero_raises():
    with pytest.raises(UndefinedSimilarityError):
        th.cos_sim(np.zeros(3), np.ones(3))


def test_instance_validation():
    with pytest.raises(ConfigError):
        th.LinRegInstance([0.1], [[1.0]], [1.0], [1.0])
    with pytest.raises(ShapeError):
        th.LinRegInstance([0.1, 0.2], [[1.0]], [1.0], [2.0])


def test_report_is_deterministic_and_counts():
    a = th.run_theory_checks(15, seed=3)
    b = th.run_theory_checks(15, seed=3)
    assert a.passes == b.passes and a.failures == b.failures
    assert [r[0] for r in a.csv_rows()] == list(th.PROPS)
    assert all(r[1] == 15 for r in a.csv_rows())
    assert sum(1 for t, p in a.failures if p == "P1-effect") == 15 - a.passes["P1-effect"]


def test_near_one_alpha_is_flagged_not_failed():
    rep = th.run_theory_checks(5, seed=0, alpha=0.999)
    assert rep.flags and "alpha=0.999" in rep.format()
    with pytest.raises(ConfigError):
        th.run_theory_checks(5, seed=0, alpha=1.0)
