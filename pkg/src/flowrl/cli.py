"""Command-line harness: pretrain, train, compare, report, init.

Exit codes: 0 success, 1 configuration error, 2 numerical failure. Relative
output directories can be re-rooted with the FLOWRL_OUT_ROOT env var. Every
command is deterministic given (config, seed).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import rl
from .config import (ConfigError, RunConfig, default_config, load_config,
                     resolve_out_dir, save_config)
from .flow import pretrain, ring_dataset
from .model import init_velocity_model, load_checkpoint, save_checkpoint
from .nn import NumericalError
from .rl import RunArtifacts, read_train_log, summarize_run, train

_TAG_MODEL_INIT, _TAG_PRETRAIN_DATA = 100, 105


def _build_dataset(cfg: RunConfig):
    ds = cfg.dataset
    if ds.kind != "ring":
        raise ConfigError(f"unknown dataset kind {ds.kind!r}")
    return ring_dataset(n_modes=ds.modes, radius=ds.radius, std=ds.std, dim=cfg.run.dim)


def _build_model(cfg: RunConfig):
    rng = rl._stream(cfg.run.seed, _TAG_MODEL_INIT)
    n_prompts = max(p["prompt_id"] for p in cfg.prompts) + 1
    return init_velocity_model(cfg.run.dim, list(cfg.model.hidden), n_prompts,
                               cfg.model.embed_dim, cfg.model.time_freqs, rng,
                               activation=cfg.model.activation)


def cmd_pretrain(config_path, verbose: bool = True) -> RunArtifacts:
    """Flow-matching pretraining: writes pretrain_loss.csv, a figure, and the checkpoint."""
    cfg = load_config(config_path)
    out_dir = resolve_out_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _build_dataset(cfg)
    model = _build_model(cfg)
    data_rng = rl._stream(cfg.run.seed, _TAG_PRETRAIN_DATA)
    result = pretrain(model, dataset, cfg.pretrain.steps, cfg.pretrain.batch,
                      cfg.pretrain.lr, data_rng,
                      loss_warn_threshold=cfg.pretrain.loss_warn_threshold,
                      verbose=verbose)
    loss_csv = out_dir / "pretrain_loss.csv"
    with open(loss_csv, "w") as f:
        f.write("step,loss\n")
        for i, loss in enumerate(result.losses):
            f.write(f"{i},{loss!r}\n")
    ckpt = out_dir / "pretrained.ckpt"
    save_checkpoint(result.model, ckpt)
    from .plots import pretrain_report_figure
    pretrain_report_figure(list(range(len(result.losses))), result.losses, out_dir)
    return RunArtifacts(out_dir=out_dir, checkpoint_path=ckpt,
                        train_log_path=loss_csv, tracker_log_path=None,
                        summary={"final_loss": result.losses[-1] if result.losses else math.nan})


def cmd_train(config_path, variant: str | None = None) -> RunArtifacts:
    """RL fine-tuning from an existing pretrained checkpoint."""
    cfg = load_config(config_path)
    return train(cfg, variant=variant)


def cmd_compare(config_path, variants: list[str], seeds: list[int]) -> Path:
    """Run all (variant, seed) cells off one shared pretrain; emit compare.csv + figures.

    A failing cell is recorded in failures.csv and the sweep continues.
    """
    if not variants or not seeds:
        raise ConfigError("compare needs at least one variant and one seed")
    for v in variants:
        if v not in rl.VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    cfg = load_config(config_path)
    out_dir = resolve_out_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    pre = cmd_pretrain(config_path, verbose=False)
    base_model = load_checkpoint(pre.checkpoint_path)

    rows = []
    failures = []
    curves: dict[str, list[tuple[list, list]]] = {}
    finals: dict[str, list[float]] = {}
    for variant in variants:
        for seed in seeds:
            cell_dir = out_dir / "cells" / f"{variant}-s{seed}"
            try:
                art = train(cfg, variant=variant, seed=seed, out_dir=cell_dir,
                            model=base_model.copy())
            except Exception as e:  # record and continue with remaining cells
                failures.append((variant, seed, f"{type(e).__name__}: {e}"))
                continue
            log = read_train_log(art.train_log_path)
            for i in range(len(log["iteration"])):
                rows.append((variant, seed, int(log["iteration"][i]),
                             int(log["total_rollouts_cum"][i]), log["eval_reward"][i]))
            curves.setdefault(variant, []).append(
                (log["total_rollouts_cum"], log["eval_reward"]))
            finals.setdefault(variant, []).append(log["eval_reward"][-1])

    compare_csv = out_dir / "compare.csv"
    with open(compare_csv, "w") as f:
        f.write("variant,seed,iteration,total_rollouts_cum,eval_reward\n")
        for variant, seed, it, cum, r in rows:
            f.write(f"{variant},{seed},{it},{cum},{r!r}\n")
    if failures:
        with open(out_dir / "failures.csv", "w") as f:
            f.write("variant,seed,error\n")
            for variant, seed, err in failures:
                f.write(f"{variant},{seed},{err.replace(',', ';')}\n")

    if curves:
        from .plots import compare_figures
        compare_figures(curves, out_dir)
        _write_compare_summary(out_dir, cfg, curves, finals)
    return compare_csv


def rollouts_to_threshold(rollouts: list, eval_rewards: list, threshold: float) -> float:
    """Cumulative rollouts at the first iteration with eval reward >= threshold."""
    for c, r in zip(rollouts, eval_rewards):
        if r >= threshold:
            return float(c)
    return math.inf


def _write_compare_summary(out_dir: Path, cfg: RunConfig,
                           curves: dict[str, list[tuple[list, list]]],
                           finals: dict[str, list[float]]) -> None:
    if "flow_grpo" in finals:
        threshold = 0.9 * float(np.median(finals["flow_grpo"]))
        threshold_rule = "0.9 * median(flow_grpo final eval reward)"
    else:
        threshold = cfg.rl.eval_threshold
        threshold_rule = "config rl.eval_threshold"
    lines = [f"threshold = {threshold!r}", f"threshold_rule = {threshold_rule}"]
    med_rtt = {}
    for variant in sorted(curves):
        rtts = [rollouts_to_threshold(x, y, threshold) for x, y in curves[variant]]
        med = float(np.median(rtts))
        med_rtt[variant] = med
        lines.append(f"{variant}.median_final_eval = {float(np.median(finals[variant]))!r}")
        lines.append(f"{variant}.median_rollouts_to_threshold = {med!r}")
    if "flow_grpo" in med_rtt:
        for variant in sorted(med_rtt):
            if variant != "flow_grpo" and math.isfinite(med_rtt[variant]) \
                    and math.isfinite(med_rtt["flow_grpo"]):
                ratio = med_rtt[variant] / med_rtt["flow_grpo"]
                lines.append(f"{variant}.rollout_ratio_vs_flow_grpo = {ratio!r}")
    (out_dir / "compare_summary.txt").write_text("\n".join(lines) + "\n")


def cmd_report(run_dir) -> dict:
    """Recompute summaries from the CSVs in a run directory and render figures.

    Verifies that any stored summary matches the recomputation exactly.
    """
    run_dir = Path(run_dir)
    train_log = run_dir / "train_log.csv"
    compare_csv = run_dir / "compare.csv"
    pretrain_csv = run_dir / "pretrain_loss.csv"
    from . import plots

    if train_log.exists():
        log = read_train_log(train_log)
        curve = list(zip((int(c) for c in log["total_rollouts_cum"]), log["eval_reward"]))
        stored = _read_summary(run_dir / "summary.txt")
        threshold = float(stored.get("eval_threshold", 0.5)) if stored else 0.5
        summary = summarize_run(curve, threshold)
        summary["eval_threshold"] = threshold
        plots.train_report_figure(log, run_dir)
        mismatches = _summary_mismatches(stored, summary)
        for key, stored_v, recomputed in mismatches:
            print(f"MISMATCH {key}: stored {stored_v} != recomputed {recomputed}")
        summary["verified"] = not mismatches
        for k in sorted(summary):
            print(f"{k} = {summary[k]}")
        return summary
    if compare_csv.exists():
        rows = compare_csv.read_text().splitlines()[1:]
        curves: dict[str, dict[int, tuple[list, list]]] = {}
        for row in rows:
            variant, seed, _it, cum, r = row.split(",")
            x, y = curves.setdefault(variant, {}).setdefault(int(seed), ([], []))
            x.append(float(cum))
            y.append(float(r))
        by_variant = {v: list(cells.values()) for v, cells in curves.items()}
        paths = plots.compare_figures(by_variant, run_dir)
        print(f"rendered {len(paths)} figures from {compare_csv}")
        return {"figures": [str(p) for p in paths]}
    if pretrain_csv.exists():
        lines = pretrain_csv.read_text().splitlines()[1:]
        steps = [int(line.split(",")[0]) for line in lines]
        losses = [float(line.split(",")[1]) for line in lines]
        plots.pretrain_report_figure(steps, losses, run_dir)
        summary = {"final_loss": losses[-1] if losses else math.nan}
        print(f"final_loss = {summary['final_loss']}")
        return summary
    raise ConfigError(f"no train_log.csv, compare.csv, or pretrain_loss.csv in {run_dir}")


def _read_summary(path: Path) -> dict:
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text().splitlines():
        key, _, val = line.partition(" = ")
        out[key] = val
    return out


def _summary_mismatches(stored: dict, recomputed: dict) -> list[tuple[str, str, str]]:
    bad = []
    for key, val in recomputed.items():
        if key in stored and stored[key] != str(val):
            bad.append((key, stored[key], str(val)))
    return bad


def cmd_init(path) -> Path:
    """Write the default 16-prompt config to `path`."""
    path = Path(path)
    if path.exists():
        raise ConfigError(f"{path} already exists, refusing to overwrite")
    save_config(default_config(), path)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowrl",
                                     description="RL fine-tuning lab for rectified flows")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="flow-matching pretraining")
    p.add_argument("config")

    p = sub.add_parser("train", help="RL fine-tuning from a pretrained checkpoint")
    p.add_argument("config")
    p.add_argument("--variant", choices=rl.VARIANTS, default=None,
                   help="override the config's rl.variant")

    p = sub.add_parser("compare", help="sweep (variant, seed) cells and plot medians")
    p.add_argument("config")
    p.add_argument("--variants", required=True,
                   help="comma-separated subset of " + ",".join(rl.VARIANTS))
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")

    p = sub.add_parser("report", help="recompute summaries and render figures from CSVs")
    p.add_argument("run_dir")

    p = sub.add_parser("init", help="write the default config file")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pretrain":
            art = cmd_pretrain(args.config)
            print(f"checkpoint: {art.checkpoint_path}")
        elif args.command == "train":
            art = cmd_train(args.config, variant=args.variant)
            print(f"out_dir: {art.out_dir}")
            for k in sorted(art.summary):
                print(f"{k} = {art.summary[k]}")
        elif args.command == "compare":
            variants = [v.strip() for v in args.variants.split(",") if v.strip()]
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            path = cmd_compare(args.config, variants, seeds)
            print(f"wrote {path}")
        elif args.command == "report":
            cmd_report(args.run_dir)
        elif args.command == "init":
            print(f"wrote {cmd_init(args.path)}")
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
