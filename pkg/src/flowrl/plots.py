"""Figure rendering for training logs and variant comparisons.

All figures are written as self-contained SVG files next to the CSVs they are
drawn from; the CSVs remain the authoritative record.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_line_plot(path, curves, xlabel: str, ylabel: str, title: str = "") -> Path:
    """curves: list of (label, x, y). Writes an SVG and returns its path."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, x, y in curves:
        ax.plot(x, y, label=label, linewidth=1.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(curves) > 1 or (curves and curves[0][0]):
        ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def median_curve(cells: list[tuple[list, list]]) -> tuple[list, list]:
    """Per-iteration median across seeds of (x, y) curves of equal length."""
    n = min(len(x) for x, _ in cells)
    xs = np.stack([np.asarray(x[:n], dtype=float) for x, _ in cells])
    ys = np.stack([np.asarray(y[:n], dtype=float) for _, y in cells])
    return list(np.median(xs, axis=0)), list(np.median(ys, axis=0))


def compare_figures(by_variant: dict[str, list[tuple[list, list]]], out_dir) -> list[Path]:
    """Per-variant median reward-vs-rollouts SVGs plus one combined figure."""
    out_dir = Path(out_dir)
    paths = []
    combined = []
    for variant in sorted(by_variant):
        x_med, y_med = median_curve(by_variant[variant])
        combined.append((variant, x_med, y_med))
        paths.append(save_line_plot(
            out_dir / f"compare_{variant}.svg", [(variant, x_med, y_med)],
            "cumulative rollouts", "eval reward",
            f"{variant}: median eval reward"))
    paths.append(save_line_plot(
        out_dir / "compare_all.svg", combined,
        "cumulative rollouts", "eval reward", "median eval reward by variant"))
    return paths


def train_report_figure(train_log: dict[str, list], out_dir) -> Path:
    """Eval/train reward curves for a single run."""
    return save_line_plot(
        Path(out_dir) / "report.svg",
        [("eval reward", train_log["total_rollouts_cum"], train_log["eval_reward"]),
         ("train batch reward", train_log["total_rollouts_cum"], train_log["mean_reward"])],
        "cumulative rollouts", "reward", "training progress")


def pretrain_report_figure(steps: list, losses: list, out_dir) -> Path:
    return save_line_plot(Path(out_dir) / "pretrain_loss.svg",
                          [("flow-matching loss", steps, losses)],
                          "step", "loss", "pretraining loss")
