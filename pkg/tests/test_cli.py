"""CLI commands end to end on tiny configurations."""

import numpy as np
import pytest

from flowrl.cli import (cmd_compare, cmd_init, cmd_pretrain, cmd_report, cmd_train,
                        main)
from flowrl.config import default_config, load_config, save_config
from flowrl.model import load_checkpoint
from flowrl.rl import read_train_log


def tiny_cfg(tmp_path, **rl_overrides):
    cfg = default_config(out_dir=str(tmp_path / "out"))
    cfg.pretrain.steps = 60
    cfg.pretrain.batch = 32
    cfg.pretrain.loss_warn_threshold = 1e9
    cfg.rl.iterations = 3
    cfg.rl.batch_prompts = 3
    cfg.rl.m_max = 4
    cfg.rl.bins = 2
    cfg.rl.t_train = 4
    cfg.rl.t_eval = 6
    cfg.rl.eval_rollouts = 2
    cfg.tracker.n0 = 2
    for k, v in rl_overrides.items():
        setattr(cfg.rl, k, v)
    path = tmp_path / "run.cfg"
    save_config(cfg, path)
    return path, cfg


def test_pretrain_writes_artifacts(tmp_path):
    path, cfg = tiny_cfg(tmp_path)
    art = cmd_pretrain(path, verbose=False)
    assert art.checkpoint_path.exists()
    assert (art.out_dir / "pretrain_loss.csv").exists()
    assert (art.out_dir / "pretrain_loss.svg").exists()
    lines = (art.out_dir / "pretrain_loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 61


def test_pretrain_rerun_byte_identical(tmp_path):
    path, _ = tiny_cfg(tmp_path)
    art1 = cmd_pretrain(path, verbose=False)
    first = (art1.out_dir / "pretrain_loss.csv").read_bytes()
    art2 = cmd_pretrain(path, verbose=False)
    second = (art2.out_dir / "pretrain_loss.csv").read_bytes()
    assert first == second


def test_train_requires_checkpoint(tmp_path):
    path, _ = tiny_cfg(tmp_path)
    assert main(["train", str(path)]) == 1


def test_train_variants_and_tracker_log(tmp_path):
    path, cfg = tiny_cfg(tmp_path)
    cmd_pretrain(path, verbose=False)
    art = cmd_train(path, variant="superflow")
    assert art.tracker_log_path is not None and art.tracker_log_path.exists()
    log = read_train_log(art.train_log_path)
    assert log["variant"] == ["superflow"] * 3
    art2 = cmd_train(path, variant="flow_grpo")
    assert art2.tracker_log_path is None
    assert not (art2.out_dir / "tracker_log.csv").exists()


def test_eval_uses_t_eval_protocol(tmp_path):
    # the logged eval reward must equal an independent evaluation of the final
    # checkpoint at T_eval with the run's fixed eval noise
    path, cfg = tiny_cfg(tmp_path)
    cmd_pretrain(path, verbose=False)
    art = cmd_train(path, variant="flow_grpo")
    log = read_train_log(art.train_log_path)
    from flowrl.config import build_pool
    from flowrl.rl import _TAG_EVAL, _stream, evaluate_policy
    model = load_checkpoint(art.checkpoint_path)
    pool = build_pool(cfg)
    noise = np.stack([
        np.stack([_stream(cfg.run.seed, _TAG_EVAL, p.prompt_id, j).standard_normal(2)
                  for j in range(cfg.rl.eval_rollouts)]) for p in pool])
    want = evaluate_policy(model, pool, cfg.rl.t_eval, noise)
    assert log["eval_reward"][-1] == pytest.approx(want, abs=1e-12)


def test_train_determinism_byte_identical(tmp_path):
    path, cfg = tiny_cfg(tmp_path)
    cmd_pretrain(path, verbose=False)
    art1 = cmd_train(path, variant="superflow")
    bytes1 = art1.train_log_path.read_bytes()
    tracker1 = art1.tracker_log_path.read_bytes()
    art2 = cmd_train(path, variant="superflow")
    assert art2.train_log_path.read_bytes() == bytes1
    assert art2.tracker_log_path.read_bytes() == tracker1


def test_trajectory_dump(tmp_path):
    path, cfg = tiny_cfg(tmp_path, dump_trajectories=True)
    cmd_pretrain(path, verbose=False)
    art = cmd_train(path, variant="flow_grpo")
    dump = (art.out_dir / "trajectories.csv").read_text().splitlines()
    assert dump[0] == "prompt_id,rollout_idx,t,std,logprob,reward"
    # 3 iterations x 3 prompts x m_max 4 x t_train 4 steps
    assert len(dump) == 1 + 3 * 3 * 4 * 4


def test_compare_grid_and_figures(tmp_path):
    path, cfg = tiny_cfg(tmp_path)
    compare_csv = cmd_compare(path, ["superflow", "flow_grpo"], [1, 2])
    lines = compare_csv.read_text().splitlines()
    assert lines[0] == "variant,seed,iteration,total_rollouts_cum,eval_reward"
    assert len(lines) == 1 + 2 * 2 * 3  # variants x seeds x iterations
    out = compare_csv.parent
    for name in ("compare_superflow.svg", "compare_flow_grpo.svg", "compare_all.svg",
                 "compare_summary.txt"):
        assert (out / name).exists(), name
    assert (out / "cells" / "superflow-s1" / "train_log.csv").exists()


def test_report_train_dir_verifies_summary(tmp_path, capsys):
    path, cfg = tiny_cfg(tmp_path)
    cmd_pretrain(path, verbose=False)
    art = cmd_train(path, variant="superflow")
    summary = cmd_report(art.out_dir)
    assert summary["verified"], "recomputed summary must match the stored one"
    assert (art.out_dir / "report.svg").exists()
    recomputed = {k: summary[k] for k in ("final_eval_reward", "rollouts_to_threshold")}
    assert recomputed["final_eval_reward"] == art.summary["final_eval_reward"]


def test_report_compare_dir(tmp_path):
    path, _ = tiny_cfg(tmp_path)
    compare_csv = cmd_compare(path, ["flow_grpo"], [1])
    out = cmd_report(compare_csv.parent)
    assert out["figures"]


def test_compare_rollouts_to_threshold_recomputation(tmp_path):
    # the summary's median rollouts-to-threshold must equal an independent
    # recomputation straight from compare.csv
    path, _ = tiny_cfg(tmp_path)
    compare_csv = cmd_compare(path, ["flow_grpo", "superflow"], [1, 2, 3])
    summary = dict(line.split(" = ") for line in
                   (compare_csv.parent / "compare_summary.txt").read_text().splitlines())
    threshold = float(summary["threshold"])
    curves = {}
    for row in compare_csv.read_text().splitlines()[1:]:
        variant, seed, _it, cum, r = row.split(",")
        curves.setdefault((variant, seed), []).append((int(cum), float(r)))
    for variant in ("flow_grpo", "superflow"):
        rtts = []
        for (v, _s), curve in curves.items():
            if v != variant:
                continue
            rtts.append(next((c for c, r in curve if r >= threshold), np.inf))
        want = float(np.median(rtts))
        assert float(summary[f"{variant}.median_rollouts_to_threshold"]) == want


def test_init_and_exit_codes(tmp_path, capsys):
    target = tmp_path / "new.cfg"
    assert main(["init", str(target)]) == 0
    assert target.exists()
    assert main(["init", str(target)]) == 1  # refuses overwrite
    cfg = load_config(target)
    assert len(cfg.prompts) == 16

    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nseed = x\n")
    assert main(["pretrain", str(bad)]) == 1
    assert main(["report", str(tmp_path / "nowhere")]) == 1


def test_main_happy_path_exit_zero(tmp_path, capsys):
    path, _ = tiny_cfg(tmp_path)
    assert main(["pretrain", str(path)]) == 0
    assert main(["train", str(path), "--variant", "flow_grpo"]) == 0
