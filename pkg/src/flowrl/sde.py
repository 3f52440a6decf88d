"""Reverse-time samplers for the velocity field.

Deterministic Euler (ODE) and stochastic Euler-Maruyama (SDE) steps over a
uniform grid t_k = k/T, k = T..1, each integrating dt = 1/T toward t = 0.
The SDE drift is v + (sigma_t^2 / 2t) * (x + (1-t) v) with per-step Gaussian
transitions of std sigma_t * sqrt(dt), so every step carries a log-probability
for importance ratios. With noise_level a = 0 the SDE step degenerates to the
ODE step exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import VelocityModel, velocity
from .nn import NumericalError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class NoiseSchedule:
    """sigma_t = noise_level * sqrt(t / (1 - t)); zero schedule when noise_level = 0."""

    noise_level: float = 0.7
    form: str = "sqrt_ratio"

    def __post_init__(self):
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.form != "sqrt_ratio":
            raise ValueError(f"unknown schedule form {self.form!r}")


def sigma_at(schedule: NoiseSchedule, t: float) -> float:
    """Diffusion coefficient at interior time t in (0, 1)."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"t={t} outside open interval (0, 1)")
    return schedule.noise_level * math.sqrt(t / (1.0 - t))


def sigma_for_step(schedule: NoiseSchedule, t: float, dt: float) -> float:
    """sigma used by the step starting at t; t is clamped to the grid interior
    (min(t, 1 - dt)) so the first step of a uniform grid stays finite."""
    t_sig = min(t, 1.0 - dt)
    if t_sig <= 0.0:
        return 0.0
    return sigma_at(schedule, t_sig)


@dataclass
class StepRecord:
    """One SDE transition; std == 0 marks a deterministic step with undefined logprob."""

    t: float
    dt: float
    x_t: np.ndarray
    mean: np.ndarray
    std: float
    x_next: np.ndarray
    logprob: float


@dataclass
class Trajectory:
    prompt_id: int
    steps: list[StepRecord] = field(default_factory=list)
    x_final: np.ndarray | None = None
    reward: float = math.nan


def gaussian_logpdf_iso(x: np.ndarray, mean: np.ndarray, std: float):
    """Log density of an isotropic Gaussian; sums over the last axis."""
    if std <= 0.0:
        raise ValueError("std must be > 0 for a defined log-density")
    d = x.shape[-1]
    quad = ((x - mean) ** 2).sum(axis=-1) / (2.0 * std * std)
    return -0.5 * d * LOG_2PI - d * math.log(std) - quad


def gaussian_step_kl(mean_a: np.ndarray, mean_b: np.ndarray, std: float):
    """KL between equal-covariance isotropic Gaussians: ||mean_a - mean_b||^2 / (2 std^2)."""
    if std <= 0.0:
        raise ValueError("std must be > 0")
    diff = np.asarray(mean_a) - np.asarray(mean_b)
    return (diff * diff).sum(axis=-1) / (2.0 * std * std)


def _check_step_args(t: float, dt: float) -> None:
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t={t} must be in (0, 1]")
    if dt <= 0.0 or dt > t:
        raise ValueError(f"dt={dt} must satisfy 0 < dt <= t={t}")


def ode_step(model: VelocityModel, x: np.ndarray, t: float, dt: float, prompt_id) -> np.ndarray:
    """Euler step of the probability-flow ODE: x <- x - dt * v(x, t, c)."""
    _check_step_args(t, dt)
    v = velocity(model, x, t, prompt_id)
    x_next = x - dt * v
    if not np.isfinite(x_next).all():
        raise NumericalError(f"non-finite state after ODE step at t={t}")
    return x_next


def step_mean(model: VelocityModel, x: np.ndarray, t: float, dt: float, prompt_id,
              schedule: NoiseSchedule):
    """SDE transition mean at (x, t) plus d(mean)/d(v) and the step sigma.

    mean = x - dt * [v + (sigma^2 / 2t)(x + (1-t) v)]; the v-coefficient is the
    scalar -dt * (1 + (sigma^2 / 2t)(1 - t)) used to backpropagate through the mean.
    """
    _check_step_args(t, dt)
    v = velocity(model, x, t, prompt_id)
    sigma = sigma_for_step(schedule, t, dt)
    coef = sigma * sigma / (2.0 * t)
    drift = v + coef * (x + (1.0 - t) * v)
    mean = x - dt * drift
    dmean_dv = -dt * (1.0 + coef * (1.0 - t))
    return mean, dmean_dv, sigma


def sde_step(model: VelocityModel, x: np.ndarray, t: float, dt: float, prompt_id,
             schedule: NoiseSchedule, rng: np.random.Generator | None = None,
             noise: np.ndarray | None = None) -> StepRecord:
    """One Euler-Maruyama transition; draws from `rng` unless `noise` is supplied."""
    mean, _, sigma = step_mean(model, x, t, dt, prompt_id, schedule)
    std = sigma * math.sqrt(dt)
    if noise is None:
        noise = rng.standard_normal(x.shape[-1])
    x_next = mean + std * noise
    if not np.isfinite(x_next).all():
        raise NumericalError(f"non-finite state after SDE step at t={t}")
    logprob = float(gaussian_logpdf_iso(x_next, mean, std)) if std > 0.0 else math.nan
    return StepRecord(t=t, dt=dt, x_t=np.asarray(x, dtype=np.float64).copy(), mean=mean,
                      std=std, x_next=x_next, logprob=logprob)


def step_logprob_under(model: VelocityModel, record: StepRecord, t: float, dt: float,
                       prompt_id, schedule: NoiseSchedule) -> float:
    """Log-density of the recorded transition under `model`, at the stored state.

    Old and new policies are compared on identical (x_t, t); only the mean moves.
    """
    if record.std <= 0.0:
        raise ValueError("deterministic step (std == 0): density ratio undefined")
    mean, _, _ = step_mean(model, record.x_t, t, dt, prompt_id, schedule)
    return float(gaussian_logpdf_iso(record.x_next, mean, record.std))


def rollout(model: VelocityModel, prompt_id: int, T: int, schedule: NoiseSchedule,
            rng: np.random.Generator, task=None) -> Trajectory:
    """One stochastic reverse-time rollout from x ~ N(0, I) at t = 1 down to t = 0.

    Draw order is fixed (initial noise, then a (T, dim) step-noise block) so a
    trajectory is a pure function of its seed. If `task` is given its reward is
    attached to the final sample.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    dim = model.data_dim
    x = rng.standard_normal(dim)
    noise = rng.standard_normal((T, dim))
    dt = 1.0 / T
    traj = Trajectory(prompt_id=int(prompt_id))
    for i, k in enumerate(range(T, 0, -1)):
        rec = sde_step(model, x, k / T, dt, prompt_id, schedule, noise=noise[i])
        traj.steps.append(rec)
        x = rec.x_next
    traj.x_final = x
    if task is not None:
        from .rewards import evaluate_reward
        traj.reward = evaluate_reward(task, x)
    return traj


def ode_rollout(model: VelocityModel, prompt_id: int, T: int,
                rng: np.random.Generator | None = None,
                x_init: np.ndarray | None = None) -> np.ndarray:
    """Deterministic T-step ODE integration from x_init (or fresh noise) to t = 0."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if x_init is None and rng is None:
        raise ValueError("need either x_init or rng")
    x = rng.standard_normal(model.data_dim) if x_init is None else np.asarray(x_init, dtype=np.float64)
    dt = 1.0 / T
    for k in range(T, 0, -1):
        x = ode_step(model, x, k / T, dt, prompt_id)
    return x


def sample_batch(model: VelocityModel, prompt_ids: np.ndarray, T: int,
                 schedule: NoiseSchedule | None, rngs=None,
                 x_init: np.ndarray | None = None, noise: np.ndarray | None = None,
                 stochastic: bool = True, record: bool = True):
    """Integrate N rollouts in lockstep (one net evaluation per step).

    Each rollout i consumes its own generator rngs[i] with the same draw order
    as `rollout`, so results are reproducible per (seed-derived) stream
    regardless of batch composition. With stochastic=False the ODE path is
    integrated and no randomness is consumed.

    Returns (trajectories, x_final) when record=True, else x_final only.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    prompt_ids = np.asarray(prompt_ids, dtype=np.intp)
    n = prompt_ids.shape[0]
    dim = model.data_dim
    dt = 1.0 / T

    if x_init is None:
        x_init = np.stack([rngs[i].standard_normal(dim) for i in range(n)])
    if stochastic and noise is None:
        noise = np.stack([rngs[i].standard_normal((T, dim)) for i in range(n)])

    x = np.asarray(x_init, dtype=np.float64).copy()
    trajs = [Trajectory(prompt_id=int(p)) for p in prompt_ids] if record else None
    for i, k in enumerate(range(T, 0, -1)):
        t = k / T
        if stochastic:
            mean, _, sigma = step_mean(model, x, t, dt, prompt_ids, schedule)
            std = sigma * math.sqrt(dt)
            x_next = mean + std * noise[:, i, :]
        else:
            v = velocity(model, x, t, prompt_ids)
            mean = x - dt * v
            std = 0.0
            x_next = mean
        if not np.isfinite(x_next).all():
            bad = int(np.where(~np.isfinite(x_next).all(axis=-1))[0][0])
            raise NumericalError(
                f"non-finite state at t={t} (prompt {int(prompt_ids[bad])}, rollout {bad})")
        if record:
            lp = gaussian_logpdf_iso(x_next, mean, std) if std > 0.0 else np.full(n, math.nan)
            for j in range(n):
                trajs[j].steps.append(StepRecord(
                    t=t, dt=dt, x_t=x[j].copy(), mean=mean[j], std=std,
                    x_next=x_next[j], logprob=float(lp[j])))
        x = x_next
    if record:
        for j in range(n):
            trajs[j].x_final = x[j]
        return trajs, x
    return x


def dump_trajectories(trajs: list[Trajectory], path, rollout_idx=None) -> None:
    """Debug CSV: one row per step (prompt_id, rollout_idx, t, std, logprob, reward)."""
    idx = range(len(trajs)) if rollout_idx is None else rollout_idx
    with open(path, "w") as f:
        f.write("prompt_id,rollout_idx,t,std,logprob,reward\n")
        for i, traj in zip(idx, trajs):
            for rec in traj.steps:
                f.write(f"{traj.prompt_id},{i},{rec.t!r},{rec.std!r},"
                        f"{rec.logprob!r},{traj.reward!r}\n")
