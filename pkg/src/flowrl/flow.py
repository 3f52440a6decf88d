"""Rectified-flow pretraining on synthetic Gaussian mixtures.

Training regresses the velocity net onto the straight-line target x1 - x0 at
interpolation points x_tau = (1 - tau) x0 + tau x1, tau ~ U[0, 1]. The default
dataset is an 8-mode ring of 2-D Gaussians.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import VelocityModel, velocity, velocity_backward
from .nn import NumericalError, adam_step, init_adam


@dataclass
class FlowSample:
    """One training triple: data point, noise point, interpolation time."""

    x0: np.ndarray
    x1: np.ndarray
    tau: float

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise ValueError("x0/x1 dims differ")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau={self.tau} outside [0, 1]")


@dataclass
class SyntheticDataset:
    """Gaussian mixture; components are (mean, std, weight) with weights summing to 1."""

    components: list[tuple[np.ndarray, float, float]]
    dim: int

    def __post_init__(self):
        w = np.array([c[2] for c in self.components])
        if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("component weights must be positive and sum to 1")
        if any(c[1] <= 0 for c in self.components):
            raise ValueError("component stds must be > 0")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        weights = np.array([c[2] for c in self.components])
        idx = rng.choice(len(self.components), size=n, p=weights)
        out = np.empty((n, self.dim))
        noise = rng.standard_normal((n, self.dim))
        for j, (mean, std, _) in enumerate(self.components):
            mask = idx == j
            out[mask] = mean + std * noise[mask]
        return out


def ring_dataset(n_modes: int = 8, radius: float = 2.0, std: float = 0.1,
                 dim: int = 2) -> SyntheticDataset:
    """Equal-weight modes on a circle of the given radius (extra dims centered at 0)."""
    comps = []
    for k in range(n_modes):
        angle = 2.0 * math.pi * k / n_modes
        mean = np.zeros(dim)
        mean[0] = radius * math.cos(angle)
        mean[1 % dim] = radius * math.sin(angle)
        comps.append((mean, std, 1.0 / n_modes))
    return SyntheticDataset(comps, dim)


def interpolate(x0: np.ndarray, x1: np.ndarray, tau: float) -> np.ndarray:
    """(1 - tau) * x0 + tau * x1."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError("x0/x1 dims differ")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    return (1.0 - tau) * x0 + tau * x1


def fm_loss_and_grads(model: VelocityModel, batch: list[FlowSample], prompt_id: int):
    """Mean squared velocity-matching error over the batch, with model gradients.

    loss = mean_i || (x1_i - x0_i) - v(x_tau_i, tau_i, c) ||^2
    """
    if not batch:
        raise ValueError("empty batch")
    n = len(batch)
    x0 = np.stack([s.x0 for s in batch])
    x1 = np.stack([s.x1 for s in batch])
    tau = np.array([s.tau for s in batch])
    x_tau = (1.0 - tau)[:, None] * x0 + tau[:, None] * x1
    target = x1 - x0
    v = velocity(model, x_tau, tau, prompt_id)
    resid = target - v
    loss = float((resid * resid).sum() / n)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite flow-matching loss: {loss}")
    grad_v = -2.0 * resid / n
    grads = velocity_backward(model, x_tau, tau, prompt_id, grad_v)
    return loss, grads


@dataclass
class PretrainResult:
    model: VelocityModel
    losses: list[float] = field(default_factory=list)


def pretrain(model: VelocityModel, dataset: SyntheticDataset, steps: int, batch_size: int,
             lr: float, rng: np.random.Generator, loss_warn_threshold: float = 3.0,
             log_every: int = 200, verbose: bool = False) -> PretrainResult:
    """Supervised flow-matching loop; returns the trained model and per-step losses.

    Prompt ids cycle across steps so every embedding row learns the (shared)
    unconditional data distribution. Aborts on non-finite loss.
    """
    if steps < 0 or batch_size < 1:
        raise ValueError("steps must be >= 0 and batch_size >= 1")
    state = init_adam(model, lr=lr)
    losses: list[float] = []
    n_prompts = model.n_prompts
    for step in range(steps):
        x0 = dataset.sample(batch_size, rng)
        x1 = rng.standard_normal((batch_size, model.data_dim))
        tau = rng.uniform(0.0, 1.0, size=batch_size)
        prompt_id = step % n_prompts
        batch = [FlowSample(x0[i], x1[i], float(tau[i])) for i in range(batch_size)]
        try:
            loss, grads = fm_loss_and_grads(model, batch, prompt_id)
        except NumericalError as e:
            raise NumericalError(f"pretraining diverged at step {step}: {e}") from None
        model, state = adam_step(model, grads, state)
        losses.append(loss)
        if verbose and (step + 1) % log_every == 0:
            print(f"pretrain step {step + 1}/{steps} loss {loss:.4f}")
    if losses and losses[-1] > loss_warn_threshold:
        warnings.warn(f"final flow-matching loss {losses[-1]:.3f} above "
                      f"threshold {loss_warn_threshold}")
    return PretrainResult(model=model, losses=losses)
