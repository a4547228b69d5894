from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import ttest_ind

from obslearn import neuralnet as nn
from obslearn.a3c import (EmptySegment, RMSPropState, TrainConfig, Transition, actor_critic_loss,
                          apply_update, clip_by_global_norm, evaluate, nstep_returns, train)
from obslearn.curriculum import random_walk_baseline
from obslearn.gridmap import bundled_map
from obslearn.gridworld import ObservationSpec, World


def seg(rewards, values, done=True):
    out = [Transition(np.zeros(1), 0, r, v, 0.5, False) for r, v in zip(rewards, values)]
    out[-1].done = done
    return out


def brute_returns(rewards, gamma, bootstrap):
    n = len(rewards)
    return [sum(gamma ** (k - t) * rewards[k] for k in range(t, n)) + gamma ** (n - t) * bootstrap
            for t in range(n)]


def trace_with(logits, value):
    logits = np.asarray(logits, float)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return nn.ForwardTrace([], logits, p, np.asarray(value, float), None, 0, 0)


def test_single_step_return():
    r, a = nstep_returns(seg([1.0], [0.3]), 0.99, 0.0)
    assert r[0] == 1.0 and a[0] == pytest.approx(0.7, abs=1e-15)


def test_two_step_hand_recursion():
    r, _ = nstep_returns(seg([0.0, 1.0], [0.0, 0.0]), 0.9, 0.0)
    np.testing.assert_allclose(r, [0.9, 1.0], rtol=0, atol=1e-15)


def test_random_segments_match_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 21))
        rewards = rng.integers(0, 2, n).astype(float)
        values = rng.random(n)
        gamma, boot = rng.random(), rng.normal()
        r, a = nstep_returns(seg(rewards, values, False), gamma, boot)
        ref = brute_returns(rewards, gamma, boot)
        np.testing.assert_allclose(r, ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a, np.array(ref) - values, rtol=0, atol=1e-12)


def test_empty_segment():
    with pytest.raises(EmptySegment):
        nstep_returns([], 0.9, 0.0)


def test_loss_pure_entropy_bonus():
    t, beta = 6, 0.01
    tr = trace_with(np.zeros((t, 4)), np.full(t, 0.4))
    loss, _, _ = actor_critic_loss(np.zeros(t, int), np.full(t, 0.4), np.zeros(t), tr, beta, 0.5)
    assert loss == pytest.approx(-beta * t * math.log(4), rel=1e-14)


def test_loss_log_two_per_step():
    t = 3
    third = math.log(1 / 3)
    tr = trace_with(np.tile([0.0, third, third, third], (t, 1)), np.zeros(t))
    assert tr.policy[0, 0] == pytest.approx(0.5)
    loss, _, _ = actor_critic_loss(np.zeros(t, int), np.zeros(t), np.ones(t), tr, 0.0, 0.0)
    assert loss == pytest.approx(t * math.log(2), rel=1e-13)


def test_head_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    t = 5
    logits, values = rng.normal(size=(t, 4)), rng.normal(size=t)
    acts, rets, adv = rng.integers(0, 4, t), rng.normal(size=t), rng.normal(size=t)

    def f(lg, v):
        return actor_critic_loss(acts, rets, adv, trace_with(lg, v), 0.05, 0.5)[0]

    _, dl, dv = actor_critic_loss(acts, rets, adv, trace_with(logits, values), 0.05, 0.5)
    eps = 1e-6
    for i in range(t):
        for j in range(4):
            lp, lm = logits.copy(), logits.copy()
            lp[i, j] += eps
            lm[i, j] -= eps
            assert dl[i, j] == pytest.approx((f(lp, values) - f(lm, values)) / (2 * eps), rel=1e-5, abs=1e-8)
        vp, vm = values.copy(), values.copy()
        vp[i] += eps
        vm[i] -= eps
        assert dv[i] == pytest.approx((f(logits, vp) - f(logits, vm)) / (2 * eps), rel=1e-5, abs=1e-8)


def test_full_loss_gradient_through_network():
    """Loss gradient via backward vs central differences in extended precision."""
    rng = np.random.default_rng(11)
    specs = [nn.Conv(4, 2, 1, activation=None), nn.Dense(12, activation=None), nn.Recurrent(6),
             nn.PolicyHead(), nn.ValueHead()]
    p = nn.build_network(specs, (2, 4, 4), rng)
    obs = (rng.random((5, 2, 4, 4)) < 0.5).astype(float)
    acts, rets, adv = rng.integers(0, 4, 5), rng.normal(size=5), rng.normal(size=5)
    tr = nn.forward(p, obs)
    _, dl, dv = actor_critic_loss(acts, rets, adv, tr, 0.01, 0.5)
    grad = nn.backward(tr, p, dl, dv)
    wide = nn.NetworkParams(p.specs, p.input_shape, p.flat.astype(np.longdouble))
    wobs = obs.astype(np.longdouble)

    def loss():
        # Independent restatement of the loss, kept in extended precision.
        t = nn.forward(wide, wobs)
        logp = np.log(t.policy)
        ent = -(t.policy * logp).sum(axis=1)
        return np.sum(-logp[np.arange(5), acts] * adv - 0.01 * ent + 0.5 * (rets - t.value) ** 2)

    eps = 1e-6
    worst = 0.0
    for i in rng.choice(p.flat.size, 64, replace=False):
        orig = wide.flat[i]
        wide.flat[i] = orig + eps
        lp = loss()
        wide.flat[i] = orig - eps
        lm = loss()
        wide.flat[i] = orig
        num = (lp - lm) / (2 * eps)
        worst = max(worst, abs(grad[i] - num) / max(abs(grad[i]), abs(num), 1e-8))
    assert worst < 1e-4


def test_rmsprop_plug_in():
    cfg = TrainConfig(learning_rate=0.001, rmsprop_decay=0.99, rmsprop_epsilon=0.1, grad_clip_norm=40)
    theta = np.zeros(1)
    apply_update(theta, np.ones(1), RMSPropState(np.zeros(1)), cfg)
    assert theta[0] == pytest.approx(-0.001 / math.sqrt(0.01 + 0.1), rel=1e-15)


def test_zero_gradient_is_noop():
    theta = np.arange(5.0)
    apply_update(theta, np.zeros(5), RMSPropState(np.zeros(5)), TrainConfig())
    np.testing.assert_array_equal(theta, np.arange(5.0))


def test_clip():
    g = np.zeros(10)
    g[0], g[1] = 60.0, 80.0
    clipped, norm = clip_by_global_norm(g, 40.0)
    assert norm == 100.0 and np.linalg.norm(clipped) == pytest.approx(40.0, abs=1e-9)


def test_shape_mismatch():
    with pytest.raises(nn.ShapeMismatch):
        apply_update(np.zeros(3), np.zeros(4), RMSPropState(np.zeros(3)), TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(workers=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


SMALL = dict(conv_channels=4, dense_units=16)


def test_single_worker_determinism():
    cfg = TrainConfig(workers=1, total_steps=1500, seed=4, rmsprop_epsilon=1e-5, learning_rate=2e-3)
    grid = bundled_map("level0")
    a = train(cfg, grid, ObservationSpec("LAGT"), 0.5, lstm=8, **SMALL)
    b = train(cfg, grid, ObservationSpec("LAGT"), 0.5, lstm=8, **SMALL)
    assert a.stats == b.stats
    assert a.params.flat.tobytes() == b.params.flat.tobytes()


def test_step_accounting_and_segment_updates():
    grid = bundled_map("level1")
    res = train(TrainConfig(workers=3, total_steps=2000, seed=1), grid, ObservationSpec("LA"), **SMALL)
    assert sum(res.worker_steps) == res.global_step == 2000
    single = train(TrainConfig(workers=1, total_steps=2000, seed=1, segment_length=20), grid,
                   ObservationSpec("LA"), **SMALL)
    assert single.updates >= 2000 / 20
    gaps = np.diff([0] + [s.global_step for s in single.stats])
    assert np.all(gaps <= 100)


def test_zero_learning_rate_matches_random_walk():
    grid = bundled_map("level1")
    spec = ObservationSpec("LA")
    init = nn.build_network(nn.global_view_specs(0, 4, 16), spec.shape(grid), np.random.default_rng(0))
    init.flat[:] = 0.0  # uniform policy
    res = train(TrainConfig(workers=1, total_steps=6000, learning_rate=0.0, seed=2), grid, spec,
                init_params=init)
    assert res.params.flat.tobytes() == init.flat.tobytes()
    walk = random_walk_baseline(grid, 200, np.random.default_rng(5))
    agent = [s.steps_to_goal for s in res.stats]
    assert ttest_ind(agent, walk.steps, equal_var=False).pvalue > 0.001


class Bandit:
    """One state, four arms: arm 0 pays 1, the others 0.5; every episode is one step."""

    def __init__(self, shape):
        self.obs = np.zeros(shape)

    def reset(self, mask_prob=0.0):
        return self.obs

    def step(self, action):
        return self.obs, (1.0 if action == 0 else 0.5), True, {"reached_goal": True}


def test_entropy_grows_with_beta():
    grid = bundled_map("level0")
    spec = ObservationSpec("LA")
    entropies = []
    for beta in (0.0, 0.01, 0.1):
        cfg = TrainConfig(workers=1, total_steps=3000, entropy_coef=beta, learning_rate=3e-3,
                          rmsprop_epsilon=1e-5, segment_length=1, seed=0)
        res = train(cfg, grid, spec, env_factory=lambda _w: Bandit(spec.shape(grid)), **SMALL)
        p = nn.forward(res.params, np.zeros(spec.shape(grid))).policy[0]
        entropies.append(float(-(p * np.log(p)).sum()))
    assert entropies[0] <= entropies[1] <= entropies[2]


def test_worker_failure_aborts():
    class Broken(Bandit):
        def step(self, action):
            raise RuntimeError("boom")

    grid = bundled_map("level0")
    spec = ObservationSpec("LA")
    with pytest.raises(RuntimeError, match="aborted"):
        train(TrainConfig(workers=2, total_steps=100), grid, spec,
              env_factory=lambda _w: Broken(spec.shape(grid)), **SMALL)


def test_evaluate_does_not_mutate():
    grid = bundled_map("level0")
    spec = ObservationSpec("LAG")
    p = nn.build_network(nn.global_view_specs(8, 4, 16), spec.shape(grid), np.random.default_rng(1))
    before = p.flat.copy()
    s = evaluate(p, World.make(grid, spec), 5, np.random.default_rng(0))
    assert np.array_equal(p.flat, before)
    assert s.episodes == 5 and 0.0 <= s.success_rate <= 1.0


def test_level0_learns_quickly():
    grid = bundled_map("level0")
    cfg = TrainConfig(workers=1, total_steps=20_000, learning_rate=2e-3, rmsprop_epsilon=1e-5, seed=0)
    res = train(cfg, grid, ObservationSpec("LAG"))
    steps = [s.steps_to_goal for s in res.stats]
    assert np.mean(steps[-100:]) < 0.5 * np.mean(steps[:100])
