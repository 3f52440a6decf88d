"""Trainer-level behavior beyond what the CLI tests cover."""

import dataclasses

import numpy as np
import pytest

from flowrl.config import default_config
from flowrl.model import init_velocity_model, load_checkpoint
from flowrl.nn import NumericalError
from flowrl.rl import read_train_log, train


def tiny_cfg(out_dir, **rl_overrides):
    cfg = default_config(out_dir=str(out_dir))
    cfg.rl.iterations = 2
    cfg.rl.batch_prompts = 2
    cfg.rl.m_max = 3
    cfg.rl.bins = 2
    cfg.rl.t_train = 3
    cfg.rl.t_eval = 4
    cfg.rl.eval_rollouts = 2
    cfg.tracker.n0 = 2
    for k, v in rl_overrides.items():
        setattr(cfg.rl, k, v)
    return cfg


def make_model(n_prompts=16):
    return init_velocity_model(2, [8], n_prompts, 3, 2, np.random.default_rng(0))


def test_zero_iterations_returns_pretrained_unchanged(tmp_path):
    cfg = tiny_cfg(tmp_path, iterations=0)
    model = make_model()
    art = train(cfg, variant="superflow", out_dir=tmp_path, model=model.copy())
    final = load_checkpoint(art.checkpoint_path)
    for a, b in zip(model.arrays(), final.arrays()):
        assert np.array_equal(a, b), "zero-iteration run must not move parameters"
    log = read_train_log(art.train_log_path)
    assert log["iteration"] == []


def test_unknown_variant_rejected(tmp_path):
    with pytest.raises(ValueError, match="variant"):
        train(tiny_cfg(tmp_path), variant="nope", out_dir=tmp_path, model=make_model())


def test_rollout_allocation_within_bounds(tmp_path):
    cfg = tiny_cfg(tmp_path, iterations=4, batch_prompts=3, m_max=6, bins=3)
    art = train(cfg, variant="superflow", out_dir=tmp_path, model=make_model())
    rows = art.tracker_log_path.read_text().splitlines()[1:]
    for row in rows:
        f = row.split(",")
        b, m = int(f[6]), int(f[7])
        if m > 0:  # sampled this iteration
            assert 1 <= b <= 3
            assert m == 6 - b + 1
            assert 4 <= m <= 6
    log = read_train_log(art.train_log_path)
    # per-iteration rollouts never exceed B * M_max
    cum = [0] + [int(c) for c in log["total_rollouts_cum"]]
    init_rollouts = 16 * cfg.tracker.n0
    deltas = np.diff(np.array(cum))
    deltas[0] -= init_rollouts
    assert (deltas <= cfg.rl.batch_prompts * cfg.rl.m_max).all()


def test_flow_spo_single_rollout_budget(tmp_path):
    cfg = tiny_cfg(tmp_path, iterations=3, batch_prompts=4)
    art = train(cfg, variant="flow_spo", out_dir=tmp_path, model=make_model())
    log = read_train_log(art.train_log_path)
    init_rollouts = 16 * cfg.tracker.n0
    assert log["total_rollouts_cum"][-1] == init_rollouts + 3 * 4  # one per prompt


def test_non_finite_model_aborts_with_numerical_error(tmp_path):
    cfg = tiny_cfg(tmp_path)
    model = make_model()
    model.mlp.weights[0][0, 0] = np.nan
    with pytest.raises(NumericalError):
        train(cfg, variant="flow_grpo", out_dir=tmp_path, model=model)


def test_invert_allocation_flips_mapping(tmp_path):
    cfg = tiny_cfg(tmp_path, iterations=3, batch_prompts=3, m_max=6, bins=3,
                   invert_allocation=True)
    art = train(cfg, variant="superflow", out_dir=tmp_path, model=make_model())
    for row in art.tracker_log_path.read_text().splitlines()[1:]:
        f = row.split(",")
        b, m = int(f[6]), int(f[7])
        if m > 0:
            assert m == 6 - 3 + b  # higher bin (more uncertainty) -> more rollouts


def test_per_group_centering_flag_runs(tmp_path):
    cfg = tiny_cfg(tmp_path, iterations=2, per_group_centering=True)
    art = train(cfg, variant="superflow", out_dir=tmp_path, model=make_model())
    assert art.train_log_path.exists()


def test_gamma_discount_scales_step_advantages(tmp_path):
    # gamma < 1 must still produce a working run with finite logs
    cfg = tiny_cfg(tmp_path, iterations=2, gamma=0.9)
    art = train(cfg, variant="superflow", out_dir=tmp_path, model=make_model())
    log = read_train_log(art.train_log_path)
    assert all(np.isfinite(v) for v in log["mean_abs_advantage"])
