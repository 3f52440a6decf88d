"""Synthetic verifiable rewards in [0, 1] with controllable per-prompt difficulty.

Three task kinds:
  mode_target   exp(-||x - target||^2 / (2 bw^2)), smooth and in (0, 1]
  region        1 inside a closed ball, else 0
  hierarchical  0 outside a primary ball, `partial` inside it but failing a
                secondary half-plane test, 1 when both hold
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import VelocityModel
from .sde import NoiseSchedule, sample_batch

REWARD_KINDS = ("mode_target", "region", "hierarchical")


@dataclass
class RewardTask:
    kind: str
    target: np.ndarray | None = None      # mode_target
    bandwidth: float = 0.5                # mode_target
    center: np.ndarray | None = None      # region / hierarchical primary
    radius: float = 0.5                   # region / hierarchical primary
    half_normal: np.ndarray | None = None  # hierarchical secondary half-plane
    half_offset: float = 0.0
    partial: float = 0.5                  # hierarchical partial credit, in (0, 1)

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.kind == "mode_target":
            if self.target is None or self.bandwidth <= 0:
                raise ValueError("mode_target needs target and bandwidth > 0")
        elif self.kind == "region":
            if self.center is None or self.radius <= 0:
                raise ValueError("region needs center and radius > 0")
        else:
            if self.center is None or self.radius <= 0 or self.half_normal is None:
                raise ValueError("hierarchical needs center, radius > 0, half_normal")
            if not 0.0 < self.partial < 1.0:
                raise ValueError("partial credit must be in (0, 1)")


@dataclass
class PromptSpec:
    prompt_id: int
    task: RewardTask
    label: str = ""


def evaluate_reward(task: RewardTask, x: np.ndarray) -> float:
    """Scalar reward in [0, 1] for a final sample."""
    x = np.asarray(x, dtype=np.float64)
    if task.kind == "mode_target":
        d2 = float(((x - task.target) ** 2).sum())
        return math.exp(-d2 / (2.0 * task.bandwidth ** 2))
    if task.kind == "region":
        d2 = float(((x - task.center) ** 2).sum())
        return 1.0 if d2 <= task.radius ** 2 else 0.0
    d2 = float(((x - task.center) ** 2).sum())
    if d2 > task.radius ** 2:
        return 0.0
    if float(np.dot(x, task.half_normal)) >= task.half_offset:
        return 1.0
    return task.partial


def evaluate_reward_batch(task: RewardTask, xs: np.ndarray) -> np.ndarray:
    """Vectorized `evaluate_reward` over rows of xs."""
    xs = np.asarray(xs, dtype=np.float64)
    if task.kind == "mode_target":
        d2 = ((xs - task.target) ** 2).sum(axis=-1)
        return np.exp(-d2 / (2.0 * task.bandwidth ** 2))
    if task.kind == "region":
        d2 = ((xs - task.center) ** 2).sum(axis=-1)
        return (d2 <= task.radius ** 2).astype(np.float64)
    d2 = ((xs - task.center) ** 2).sum(axis=-1)
    inside = d2 <= task.radius ** 2
    passes = xs @ task.half_normal >= task.half_offset
    return np.where(inside, np.where(passes, 1.0, task.partial), 0.0)


def oracle_reward_stats(task: RewardTask, model: VelocityModel, schedule: NoiseSchedule,
                        T: int, n: int, rng: np.random.Generator,
                        prompt_id: int = 0) -> tuple[float, float]:
    """Monte-Carlo (mean, std) of the reward under n fresh SDE rollouts.

    Standard error of the mean is std / sqrt(n). Independent of the trainer's
    bookkeeping; used as an oracle for tracker and allocation checks.
    """
    if n < 100:
        raise ValueError("n must be >= 100 for a usable estimate")
    dim = model.data_dim
    x1 = rng.standard_normal((n, dim))
    noise = rng.standard_normal((n, T, dim))
    ids = np.full(n, prompt_id, dtype=np.intp)
    x_final = sample_batch(model, ids, T, schedule, x_init=x1, noise=noise, record=False)
    r = evaluate_reward_batch(task, x_final)
    return float(r.mean()), float(r.std())


def default_prompt_pool(radius: float = 2.0, n_modes: int = 8) -> list[PromptSpec]:
    """16 prompts over the ring dataset spanning easy, hard, and mid-variance tasks."""

    def mode(k):
        angle = 2.0 * math.pi * k / n_modes
        return np.array([radius * math.cos(angle), radius * math.sin(angle)])

    pool: list[PromptSpec] = []
    # easy: wide kernels on four modes -> high initial reward, low variance
    for i, k in enumerate((0, 2, 4, 6)):
        pool.append(PromptSpec(i, RewardTask("mode_target", target=mode(k), bandwidth=1.2),
                               label=f"easy mode {k}"))
    # hard: narrow kernels -> low initial reward
    for i, k in enumerate((1, 3, 5, 7)):
        pool.append(PromptSpec(4 + i, RewardTask("mode_target", target=mode(k), bandwidth=0.35),
                               label=f"hard mode {k}"))
    # regions of varying hit rate -> heterogeneous reward variance
    pool.append(PromptSpec(8, RewardTask("region", center=mode(0), radius=0.5),
                           label="region one mode"))
    pool.append(PromptSpec(9, RewardTask("region", center=(mode(1) + mode(2)) / 2.0, radius=1.2),
                           label="region two modes"))
    pool.append(PromptSpec(10, RewardTask("region", center=np.zeros(2), radius=0.8),
                           label="region center (hard)"))
    pool.append(PromptSpec(11, RewardTask("region", center=np.zeros(2), radius=radius + 0.5),
                           label="region whole ring (easy)"))
    # hierarchical: ball around a mode plus a half-plane through it
    for i, k in enumerate((0, 2, 5, 7)):
        center = mode(k)
        normal = center / np.linalg.norm(center)
        pool.append(PromptSpec(12 + i, RewardTask(
            "hierarchical", center=center, radius=0.8, half_normal=normal,
            half_offset=float(np.dot(center, normal)), partial=0.5),
            label=f"hierarchical mode {k}"))
    return pool
