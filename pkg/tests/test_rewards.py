"""Reward task semantics, range invariants, and the Monte-Carlo oracle."""

import numpy as np
import pytest

from flowrl.model import init_velocity_model
from flowrl.rewards import (PromptSpec, RewardTask, default_prompt_pool,
                            evaluate_reward, evaluate_reward_batch,
                            oracle_reward_stats)
from flowrl.rl import _stream
from flowrl.sde import NoiseSchedule


def test_mode_target_peak_and_decay():
    task = RewardTask("mode_target", target=np.array([1.0, 2.0]), bandwidth=0.5)
    assert evaluate_reward(task, np.array([1.0, 2.0])) == 1.0
    # strictly decreasing in distance
    ds = [0.1, 0.5, 1.0, 2.0, 4.0]
    vals = [evaluate_reward(task, np.array([1.0 + d, 2.0])) for d in ds]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_region_closed_ball_boundary():
    task = RewardTask("region", center=np.zeros(2), radius=1.0)
    assert evaluate_reward(task, np.array([1.0, 0.0])) == 1.0  # boundary included
    assert evaluate_reward(task, np.array([1.0 + 1e-9, 0.0])) == 0.0
    assert evaluate_reward(task, np.zeros(2)) == 1.0


def test_hierarchical_three_values():
    task = RewardTask("hierarchical", center=np.zeros(2), radius=1.0,
                      half_normal=np.array([1.0, 0.0]), half_offset=0.0, partial=0.5)
    assert evaluate_reward(task, np.array([5.0, 0.0])) == 0.0       # outside primary
    assert evaluate_reward(task, np.array([-0.5, 0.0])) == 0.5       # fails half-plane
    assert evaluate_reward(task, np.array([0.5, 0.0])) == 1.0        # both hold
    # only {0, partial, 1} ever occur
    rng = np.random.default_rng(0)
    vals = {evaluate_reward(task, rng.standard_normal(2) * 2) for _ in range(500)}
    assert vals <= {0.0, 0.5, 1.0}


def test_rewards_in_unit_interval_property():
    rng = np.random.default_rng(1)
    tasks = [
        RewardTask("mode_target", target=rng.standard_normal(2), bandwidth=0.3),
        RewardTask("region", center=rng.standard_normal(2), radius=0.7),
        RewardTask("hierarchical", center=rng.standard_normal(2), radius=1.0,
                   half_normal=np.array([0.6, 0.8]), half_offset=0.2, partial=0.25),
    ]
    for task in tasks:
        xs = rng.standard_normal((10000, 2)) * 3
        r = evaluate_reward_batch(task, xs)
        assert (r >= 0.0).all() and (r <= 1.0).all()


def test_batch_matches_scalar():
    rng = np.random.default_rng(2)
    for task in default_prompt_pool():
        xs = rng.standard_normal((50, 2)) * 2
        batch = evaluate_reward_batch(task.task, xs)
        for i in range(50):
            assert batch[i] == pytest.approx(evaluate_reward(task.task, xs[i]),
                                             rel=1e-14, abs=0.0)


def test_invalid_tasks_rejected():
    with pytest.raises(ValueError):
        RewardTask("mode_target", target=np.zeros(2), bandwidth=0.0)
    with pytest.raises(ValueError):
        RewardTask("region", center=np.zeros(2), radius=-1.0)
    with pytest.raises(ValueError):
        RewardTask("hierarchical", center=np.zeros(2), radius=1.0,
                   half_normal=np.ones(2), partial=1.0)
    with pytest.raises(ValueError):
        RewardTask("nonsense")


def make_model(seed=0):
    return init_velocity_model(2, [16], 2, 3, 2, np.random.default_rng(seed))


def test_oracle_covering_region_gives_one():
    m = make_model()
    task = RewardTask("region", center=np.zeros(2), radius=100.0)
    mean, std = oracle_reward_stats(task, m, NoiseSchedule(0.7), 5, 200, _stream(0, 1))
    assert mean == 1.0 and std == 0.0


def test_oracle_empty_region_gives_zero():
    m = make_model()
    task = RewardTask("region", center=np.array([1e6, 1e6]), radius=0.1)
    mean, _ = oracle_reward_stats(task, m, NoiseSchedule(0.7), 5, 200, _stream(0, 2))
    assert mean == 0.0


def test_oracle_self_consistency_across_seeds():
    m = make_model(seed=5)
    task = RewardTask("mode_target", target=np.array([0.5, 0.5]), bandwidth=1.0)
    sch = NoiseSchedule(0.7)
    n = 1500
    m1, s1 = oracle_reward_stats(task, m, sch, 8, n, _stream(1, 1))
    m2, s2 = oracle_reward_stats(task, m, sch, 8, n, _stream(2, 2))
    se = np.hypot(s1, s2) / np.sqrt(n)
    assert abs(m1 - m2) < 3 * se


def test_oracle_rejects_small_n():
    with pytest.raises(ValueError):
        oracle_reward_stats(RewardTask("region", center=np.zeros(2), radius=1.0),
                            make_model(), NoiseSchedule(0.7), 5, 10, _stream(0, 0))


def test_default_pool_shape():
    pool = default_prompt_pool()
    assert len(pool) == 16
    assert len({p.prompt_id for p in pool}) == 16
    kinds = {p.task.kind for p in pool}
    assert kinds == {"mode_target", "region", "hierarchical"}
