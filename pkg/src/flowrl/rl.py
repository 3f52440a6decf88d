"""RL machinery for fine-tuning the velocity field against scalar rewards.

Pieces: group-relative advantages, Beta value trackers with KL-driven
forgetting, uncertainty-binned rollout allocation, step-level advantage
re-scaling by the per-step diffusion coefficient, a clipped importance-ratio
surrogate with a KL penalty to a frozen reference, and the four training
variants (flow_grpo, flow_spo, spo_fr, superflow).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import VelocityModel
from .nn import NumericalError, adam_step, init_adam
from .rewards import PromptSpec, evaluate_reward_batch
from .sde import (NoiseSchedule, Trajectory, gaussian_step_kl, sample_batch,
                  step_mean)

EPS_STD = 1e-6

VARIANTS = ("flow_grpo", "flow_spo", "spo_fr", "superflow")
TRACKER_VARIANTS = ("flow_spo", "spo_fr", "superflow")

# stream tags keep every random draw attributable to (seed, purpose, ...)
_TAG_INIT, _TAG_ROLLOUT, _TAG_EVAL, _TAG_SAMPLE = 101, 102, 103, 104


# ---------------------------------------------------------------------------
# advantages

def group_advantage(rewards) -> list[float]:
    """Group-normalized advantages: (r - mean) / max(pop std, 1e-6).

    An all-equal group yields exact zeros so it contributes no policy gradient.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("group size must be >= 2 (use the tracker baseline otherwise)")
    if r.max() == r.min():
        return [0.0] * r.size
    std = max(float(r.std()), EPS_STD)
    return list((r - r.mean()) / std)


def raw_advantage(r: float, v_prev: float) -> float:
    """Reward minus the pre-update tracker baseline."""
    return r - v_prev


def normalize_batch_advantages(raw) -> list[float]:
    """(A - mu_B) / max(sigma_B, 1e-6) with batch-level population statistics.

    A constant batch yields exact zeros; a batch of one passes through with a
    warning (normalization undefined).
    """
    a = np.asarray(raw, dtype=np.float64)
    if a.size < 2:
        warnings.warn("batch of 1: advantage normalization undefined, passing through")
        return list(a)
    if a.max() == a.min():
        return [0.0] * a.size
    return list((a - a.mean()) / max(float(a.std()), EPS_STD))


def step_advantage(A_tau: float, sigma_t: float, eta: float) -> float:
    """Redistribute a trajectory advantage to a step: eta * sigma_t * A_tau."""
    if sigma_t < 0 or eta <= 0:
        raise ValueError("need sigma_t >= 0 and eta > 0")
    return eta * sigma_t * A_tau


def discounted_advantage(rewards_per_step, gamma: float, baseline: float, t: int) -> float:
    """Monte Carlo advantage sum_{s>=t} gamma^(s-t) r_s - baseline.

    With terminal-only reward this is gamma^(last-t) * r_final - baseline.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    r = np.asarray(rewards_per_step, dtype=np.float64)
    if not 0 <= t < r.size:
        raise ValueError(f"step index {t} out of range")
    powers = gamma ** np.arange(r.size - t)
    return float((powers * r[t:]).sum()) - baseline


# ---------------------------------------------------------------------------
# value trackers

@dataclass
class TrackerConfig:
    rho_min: float = 0.875
    rho_max: float = 0.99
    d_half: float = 1.0
    n0: int = 8
    epsilon_w: float = 0.2
    probe_cap: int = 32

    def __post_init__(self):
        if not 0.0 < self.rho_min <= self.rho_max <= 1.0:
            raise ValueError("need 0 < rho_min <= rho_max <= 1")
        if self.rho_min >= 1.0:
            raise ValueError("rho_min must be < 1 so N0 = 1/(1-rho_min) is finite")
        if self.d_half <= 0 or self.n0 < 1 or self.epsilon_w <= 0:
            raise ValueError("need d_half > 0, n0 >= 1, epsilon_w > 0")

    @property
    def n_equilibrium(self) -> float:
        return 1.0 / (1.0 - self.rho_min)


@dataclass
class ValueTracker:
    """Beta(alpha, beta) running reward estimate plus last-visit policy probes."""

    alpha: float
    beta: float
    visits: int = 0
    probe_x: np.ndarray | None = None      # (k, dim) states from the last visit
    probe_t: np.ndarray | None = None      # (k,) grid times
    probe_dt: np.ndarray | None = None     # (k,) step sizes
    probe_std: np.ndarray | None = None    # (k,) transition stds at the probes
    probe_means: np.ndarray | None = None  # (k, dim) acting-policy means

    @property
    def v_hat(self) -> float:
        return self.alpha / (self.alpha + self.beta)


def tracker_init(rewards_n0, cfg: TrackerConfig) -> ValueTracker:
    """Initialize from n0 rewards of the initial policy at the equilibrium sample size.

    v0 exactly 0 or 1 is nudged by 1e-3 to keep both pseudo-counts positive.
    """
    r = np.asarray(rewards_n0, dtype=np.float64)
    if r.size != cfg.n0:
        raise ValueError(f"expected {cfg.n0} initial rewards, got {r.size}")
    if (r < 0).any() or (r > 1).any():
        raise ValueError("rewards must lie in [0, 1]")
    v0 = float(r.mean())
    if v0 == 0.0:
        v0 = 1e-3
    elif v0 == 1.0:
        v0 = 1.0 - 1e-3
    n0_eff = cfg.n_equilibrium
    return ValueTracker(alpha=n0_eff * v0, beta=n0_eff * (1.0 - v0))


def forgetting_factor(D: float, cfg: TrackerConfig) -> float:
    """rho = clamp(2^(-D / d_half), rho_min, rho_max)."""
    if D < 0:
        raise ValueError("policy drift D must be >= 0")
    return min(max(2.0 ** (-D / cfg.d_half), cfg.rho_min), cfg.rho_max)


def tracker_update(tr: ValueTracker, r: float, rho: float) -> ValueTracker:
    """alpha <- rho*alpha + r, beta <- rho*beta + (1 - r); probes unchanged."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"reward {r} outside [0, 1]")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho {rho} outside (0, 1]")
    return replace(tr, alpha=rho * tr.alpha + r, beta=rho * tr.beta + (1.0 - r))


def uncertainty_weight(tr: ValueTracker, epsilon_w: float) -> float:
    """sqrt(v_hat (1 - v_hat)) + epsilon: the prompt-sampling priority."""
    v = tr.v_hat
    return math.sqrt(max(v * (1.0 - v), 0.0)) + epsilon_w


def record_visit_probes(tr: ValueTracker, trajs: list[Trajectory],
                        cap: int) -> ValueTracker:
    """Store up to `cap` evenly spaced (state, time, mean) probes from a visit."""
    recs = [rec for traj in trajs for rec in traj.steps]
    if not recs:
        return tr
    if len(recs) > cap:
        idx = np.linspace(0, len(recs) - 1, cap).astype(int)
        recs = [recs[i] for i in idx]
    return replace(
        tr,
        visits=tr.visits + 1,
        probe_x=np.stack([r.x_t for r in recs]),
        probe_t=np.array([r.t for r in recs]),
        probe_dt=np.array([r.dt for r in recs]),
        probe_std=np.array([r.std for r in recs]),
        probe_means=np.stack([r.mean for r in recs]),
    )


def estimate_prompt_kl(model: VelocityModel, tr: ValueTracker, prompt_id: int,
                       schedule: NoiseSchedule) -> float:
    """Mean Gaussian step KL between the model now and the last visit's policy,
    evaluated at the stored probe states. Zero-std probes are skipped."""
    if tr.probe_x is None or tr.probe_x.shape[0] == 0:
        warnings.warn(f"prompt {prompt_id}: no stored probes, treating drift as 0")
        return 0.0
    total, count = 0.0, 0
    keys = np.stack([tr.probe_t, tr.probe_dt], axis=1)
    for t, dt in np.unique(keys, axis=0):
        mask = (tr.probe_t == t) & (tr.probe_dt == dt) & (tr.probe_std > 0.0)
        if not mask.any():
            continue
        mean_now, _, _ = step_mean(model, tr.probe_x[mask], float(t), float(dt),
                                   prompt_id, schedule)
        kl = gaussian_step_kl(mean_now, tr.probe_means[mask], float(tr.probe_std[mask][0]))
        total += float(np.sum(kl))
        count += int(mask.sum())
    return total / count if count else 0.0


# ---------------------------------------------------------------------------
# rollout allocation

@dataclass
class GroupAllocation:
    """Per-prompt rollout counts from uncertainty binning: m = M_max - b + 1."""

    entries: dict[int, int]
    bin_edges: np.ndarray
    bin_of: dict[int, int]


def allocate_rollouts(weights: dict[int, float], K: int, M_max: int,
                      invert: bool = False) -> GroupAllocation:
    """Bin uncertainty weights into K uniform bins over [min w, max w].

    Bin k covers [q_{k-1}, q_k) with the top bin closed; all-equal weights fall
    into bin 1. m = M_max - b + 1 by default; `invert` flips the mapping so
    higher-uncertainty bins get more rollouts instead.
    """
    if K < 1 or M_max < K:
        raise ValueError("need M_max >= K >= 1")
    if not weights:
        raise ValueError("need at least one prompt")
    pids = sorted(weights)
    w = np.array([weights[p] for p in pids], dtype=np.float64)
    lo, hi = float(w.min()), float(w.max())
    edges = np.linspace(lo, hi, K + 1)
    if lo == hi or K == 1:
        bins = np.ones(len(pids), dtype=int)
    else:
        bins = np.searchsorted(edges, w, side="right")
        bins[w >= hi] = K  # top bin closed
        bins = np.clip(bins, 1, K)
    bin_of = {p: int(b) for p, b in zip(pids, bins)}
    if invert:
        entries = {p: M_max - K + b for p, b in bin_of.items()}
    else:
        entries = {p: M_max - b + 1 for p, b in bin_of.items()}
    return GroupAllocation(entries=entries, bin_edges=edges, bin_of=bin_of)


# ---------------------------------------------------------------------------
# clipped surrogate objective

@dataclass
class AdvantageSet:
    """Trajectory-level advantages and their per-step re-estimates."""

    traj_adv: np.ndarray          # (n_traj,)
    step_adv: list[np.ndarray]    # per trajectory, (T,)
    mu_b: float = 0.0
    sigma_b: float = 1.0


def policy_objective(trajs: list[Trajectory], advs: AdvantageSet,
                     model_new: VelocityModel, model_ref: VelocityModel,
                     schedule: NoiseSchedule, eps_clip: float, beta_kl: float):
    """Clipped importance-ratio surrogate with per-step KL penalty to the reference.

    Per step: ratio = exp(logprob_new - stored logprob); term =
    min(ratio * A_t, clip(ratio, 1-eps, 1+eps) * A_t) - beta * KL(new || ref),
    with both policies evaluated at the stored states. The objective averages
    over steps within a trajectory and over trajectories; returns
    (loss = -objective, model-shaped grads, stats). Gradients flow through the
    new-policy means only.
    """
    if not trajs:
        raise ValueError("no trajectories")
    n_traj = len(trajs)
    weights_per_traj = 1.0 / n_traj

    # group step rows by (t, dt) so each group is one batched net evaluation
    groups: dict[tuple[float, float], list[tuple[int, int]]] = {}
    for i, traj in enumerate(trajs):
        for k, rec in enumerate(traj.steps):
            if rec.std <= 0.0:
                raise ValueError("policy_objective needs stochastic steps (std > 0)")
            groups.setdefault((rec.t, rec.dt), []).append((i, k))

    objective = 0.0
    grads = model_new.zeros_like()
    kl_sum = ratio_sum = clip_count = 0.0
    n_steps_total = 0

    from .model import velocity_backward

    for (t, dt), items in sorted(groups.items()):
        x_t = np.stack([trajs[i].steps[k].x_t for i, k in items])
        x_next = np.stack([trajs[i].steps[k].x_next for i, k in items])
        lp_old = np.array([trajs[i].steps[k].logprob for i, k in items])
        std = np.array([trajs[i].steps[k].std for i, k in items])
        a_hat = np.array([advs.step_adv[i][k] for i, k in items])
        ids = np.array([trajs[i].prompt_id for i, k in items], dtype=np.intp)
        row_w = np.array([weights_per_traj / len(trajs[i].steps) for i, k in items])

        mean_new, dmean_dv, _ = step_mean(model_new, x_t, t, dt, ids, schedule)
        mean_ref, _, _ = step_mean(model_ref, x_t, t, dt, ids, schedule)
        var = std * std
        d = x_t.shape[1]
        quad = ((x_next - mean_new) ** 2).sum(axis=1) / (2.0 * var)
        lp_new = -0.5 * d * math.log(2.0 * math.pi) - d * np.log(std) - quad
        ratio = np.exp(lp_new - lp_old)
        if not np.isfinite(ratio).all():
            bad = int(np.argmax(~np.isfinite(ratio)))
            i, k = items[bad]
            raise NumericalError(
                f"non-finite ratio (prompt {trajs[i].prompt_id}, step t={t})")

        clipped = np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip)
        unclipped_term = ratio * a_hat
        clipped_term = clipped * a_hat
        surr = np.minimum(unclipped_term, clipped_term)
        kl = ((mean_new - mean_ref) ** 2).sum(axis=1) / (2.0 * var)
        term = surr - beta_kl * kl
        objective += float((row_w * term).sum())

        # d(term)/d(mean_new): the min gate passes gradient only on the
        # unclipped branch; the KL penalty always contributes.
        active = unclipped_term <= clipped_term
        dlp_dmean = (x_next - mean_new) / var[:, None]
        g_mean = (active * a_hat * ratio)[:, None] * dlp_dmean \
            - beta_kl * (mean_new - mean_ref) / var[:, None]
        grad_loss_mean = -row_w[:, None] * g_mean  # loss = -objective
        grad_v = grad_loss_mean * dmean_dv
        g = velocity_backward(model_new, x_t, t, ids, grad_v)
        for acc, gi in zip(grads.arrays(), g.arrays()):
            acc += gi

        kl_sum += float(kl.sum())
        ratio_sum += float(ratio.sum())
        clip_count += float((~active).sum())
        n_steps_total += len(items)

    loss = -objective
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite objective: {loss}")
    stats = {
        "mean_kl_to_ref": kl_sum / n_steps_total,
        "mean_ratio": ratio_sum / n_steps_total,
        "clip_fraction": clip_count / n_steps_total,
        "mean_abs_advantage": float(np.mean([np.abs(a).mean() for a in advs.step_adv])),
    }
    return loss, grads, stats


# ---------------------------------------------------------------------------
# training loop

@dataclass
class RunArtifacts:
    out_dir: Path
    checkpoint_path: Path
    train_log_path: Path
    tracker_log_path: Path | None
    summary: dict


def _fmt(x) -> str:
    return repr(float(x))


def _stream(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def _weighted_sample_without_replacement(pids, weights, size, rng) -> list[int]:
    pids = list(pids)
    w = np.array([weights[p] for p in pids], dtype=np.float64)
    chosen = []
    for _ in range(min(size, len(pids))):
        p = w / w.sum()
        j = int(rng.choice(len(pids), p=p))
        chosen.append(pids.pop(j))
        w = np.delete(w, j)
    return chosen


def evaluate_policy(model: VelocityModel, pool: list[PromptSpec], T_eval: int,
                    eval_noise: np.ndarray) -> float:
    """Mean reward over prompts under the deterministic sampler at T_eval steps.

    eval_noise is (n_prompts, n_eval, dim); fixed noise keeps curves smooth and
    runs reproducible.
    """
    n_eval = eval_noise.shape[1]
    ids = np.repeat([p.prompt_id for p in pool], n_eval)
    x_init = eval_noise.reshape(-1, eval_noise.shape[2])
    x_final = sample_batch(model, ids, T_eval, None, x_init=x_init,
                           stochastic=False, record=False)
    total = 0.0
    for j, p in enumerate(pool):
        xs = x_final[j * n_eval:(j + 1) * n_eval]
        total += float(evaluate_reward_batch(p.task, xs).mean())
    return total / len(pool)


def train(config, variant: str | None = None, seed: int | None = None,
          out_dir=None, model: VelocityModel | None = None) -> RunArtifacts:
    """Run one RL fine-tuning cell and write train_log.csv (+ tracker_log.csv).

    Per iteration: pick prompts (uniform for flow_grpo, else by uncertainty
    weight), allocate rollouts, collect trajectories with the frozen collection
    snapshot, convert rewards to per-step advantages per the variant, update
    trackers, then take one clipped-surrogate Adam step. The collection
    snapshot refreshes every `update_interval` iterations.
    """
    from .config import build_pool, resolve_out_dir
    from .model import load_checkpoint, save_checkpoint

    rl = config.rl
    variant = variant or rl.variant
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r} (expected one of {VARIANTS})")
    seed = config.run.seed if seed is None else seed
    out_dir = Path(resolve_out_dir(config) if out_dir is None else out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        ckpt = Path(rl.checkpoint) if rl.checkpoint else resolve_out_dir(config) / "pretrained.ckpt"
        if not ckpt.exists():
            raise FileNotFoundError(f"pretrained checkpoint not found: {ckpt}")
        model = load_checkpoint(ckpt)

    pool = build_pool(config)
    schedule = NoiseSchedule(rl.noise_level)
    tcfg = config.tracker
    model_ref = model.copy()
    collect_model = model.copy()
    adam = init_adam(model, lr=rl.lr)
    use_trackers = variant in TRACKER_VARIANTS

    total_rollouts = 0
    trackers: dict[int, ValueTracker] = {}
    if use_trackers:
        for p in pool:
            rngs = [_stream(seed, _TAG_INIT, p.prompt_id, j) for j in range(tcfg.n0)]
            trajs, x_final = sample_batch(collect_model,
                                          np.full(tcfg.n0, p.prompt_id, dtype=np.intp),
                                          rl.t_train, schedule, rngs=rngs)
            rewards = evaluate_reward_batch(p.task, x_final)
            _check_rewards(rewards, p.prompt_id)
            tr = tracker_init(rewards, tcfg)
            trackers[p.prompt_id] = record_visit_probes(tr, trajs, tcfg.probe_cap)
            total_rollouts += tcfg.n0

    eval_noise = np.stack([
        np.stack([_stream(seed, _TAG_EVAL, p.prompt_id, j).standard_normal(model.data_dim)
                  for j in range(rl.eval_rollouts)])
        for p in pool])

    train_log_path = out_dir / "train_log.csv"
    tracker_log_path = out_dir / "tracker_log.csv" if use_trackers else None
    if not use_trackers:
        (out_dir / "tracker_log.csv").unlink(missing_ok=True)  # stale from another variant
    timing_path = out_dir / "timing.csv"
    log_f = open(train_log_path, "w")
    log_f.write("iteration,variant,total_rollouts_cum,mean_reward,eval_reward,"
                "mean_abs_advantage,mean_kl_to_ref,entropy_proxy\n")
    tracker_f = None
    if use_trackers:
        tracker_f = open(tracker_log_path, "w")
        tracker_f.write("iteration,prompt_id,v_hat,alpha,beta,w,bin,m\n")
    timing_f = open(timing_path, "w")
    timing_f.write("iteration,wallclock_s\n")
    dump_f = None
    if rl.dump_trajectories:
        dump_f = open(out_dir / "trajectories.csv", "w")
        dump_f.write("prompt_id,rollout_idx,t,std,logprob,reward\n")

    eval_curve: list[tuple[int, float]] = []
    t_start = time.perf_counter()
    try:
        for it in range(1, rl.iterations + 1):
            it_t0 = time.perf_counter()
            if (it - 1) % rl.update_interval == 0:
                collect_model = model.copy()

            sample_rng = _stream(seed, _TAG_SAMPLE, it)
            if use_trackers:
                weights = {p.prompt_id: uncertainty_weight(trackers[p.prompt_id], tcfg.epsilon_w)
                           for p in pool}
                batch_pids = _weighted_sample_without_replacement(
                    sorted(weights), weights, rl.batch_prompts, sample_rng)
            else:
                weights = {}
                all_pids = sorted(p.prompt_id for p in pool)
                idx = sample_rng.choice(len(all_pids), size=min(rl.batch_prompts, len(all_pids)),
                                        replace=False)
                batch_pids = [all_pids[i] for i in idx]
            batch_pids = sorted(batch_pids)

            alloc = None
            if variant == "superflow":
                alloc = allocate_rollouts({p: weights[p] for p in batch_pids},
                                          rl.bins, rl.m_max, invert=rl.invert_allocation)
                m_of = alloc.entries
            elif variant == "flow_spo":
                m_of = {p: 1 for p in batch_pids}
            else:  # flow_grpo, spo_fr: fixed group size
                m_of = {p: rl.m_max for p in batch_pids}

            task_of = {p.prompt_id: p.task for p in pool}
            ids, rngs = [], []
            for pid in batch_pids:
                for j in range(m_of[pid]):
                    ids.append(pid)
                    rngs.append(_stream(seed, _TAG_ROLLOUT, it, pid, j))
            trajs, x_final = sample_batch(collect_model, np.array(ids, dtype=np.intp),
                                          rl.t_train, schedule, rngs=rngs)
            rewards = np.empty(len(trajs))
            offset = 0
            for pid in batch_pids:
                m = m_of[pid]
                rewards[offset:offset + m] = evaluate_reward_batch(
                    task_of[pid], x_final[offset:offset + m])
                offset += m
            for i, traj in enumerate(trajs):
                traj.reward = float(rewards[i])
            _check_rewards(rewards, batch_pids)
            total_rollouts += len(trajs)

            advs = _build_advantages(variant, trajs, rewards, trackers, rl)

            if use_trackers:
                by_pid: dict[int, list[int]] = {}
                for i, traj in enumerate(trajs):
                    by_pid.setdefault(traj.prompt_id, []).append(i)
                for pid in batch_pids:
                    tr = trackers[pid]
                    drift = estimate_prompt_kl(model, tr, pid, schedule)
                    rho = forgetting_factor(drift, tcfg)
                    for nth, i in enumerate(by_pid[pid]):
                        tr = tracker_update(tr, rewards[i], rho if nth == 0 else 1.0)
                    _check_tracker(tr, pid)
                    trackers[pid] = record_visit_probes(
                        tr, [trajs[i] for i in by_pid[pid]], tcfg.probe_cap)

            loss, grads, stats = policy_objective(trajs, advs, model, model_ref,
                                                  schedule, rl.eps_clip, rl.beta_kl)
            model, adam = adam_step(model, grads, adam)

            eval_reward = evaluate_policy(model, pool, rl.t_eval, eval_noise)
            eval_curve.append((total_rollouts, eval_reward))
            entropy_proxy = float(np.mean([rec.std for tr_ in trajs for rec in tr_.steps]))
            log_f.write(f"{it},{variant},{total_rollouts},{_fmt(rewards.mean())},"
                        f"{_fmt(eval_reward)},{_fmt(stats['mean_abs_advantage'])},"
                        f"{_fmt(stats['mean_kl_to_ref'])},{_fmt(entropy_proxy)}\n")
            if tracker_f is not None:
                for p in pool:
                    pid = p.prompt_id
                    tr = trackers[pid]
                    b = alloc.bin_of.get(pid, 0) if alloc is not None else 0
                    m = m_of.get(pid, 0)
                    tracker_f.write(f"{it},{pid},{_fmt(tr.v_hat)},{_fmt(tr.alpha)},"
                                    f"{_fmt(tr.beta)},{_fmt(weights[pid])},{b},{m}\n")
            timing_f.write(f"{it},{time.perf_counter() - it_t0:.6f}\n")
            if dump_f is not None:
                for i, traj in enumerate(trajs):
                    for rec in traj.steps:
                        dump_f.write(f"{traj.prompt_id},{i},{rec.t!r},{rec.std!r},"
                                     f"{rec.logprob!r},{traj.reward!r}\n")
    finally:
        log_f.close()
        if tracker_f is not None:
            tracker_f.close()
        timing_f.close()
        if dump_f is not None:
            dump_f.close()

    with open(timing_path, "a") as f:
        f.write(f"total,{time.perf_counter() - t_start:.6f}\n")
    ckpt_path = out_dir / "final.ckpt"
    save_checkpoint(model, ckpt_path)
    summary = summarize_run(eval_curve, rl.eval_threshold)
    summary["eval_threshold"] = rl.eval_threshold
    summary["variant"] = variant
    summary["seed"] = seed
    write_summary(out_dir / "summary.txt", summary)
    return RunArtifacts(out_dir=out_dir, checkpoint_path=ckpt_path,
                        train_log_path=train_log_path,
                        tracker_log_path=tracker_log_path, summary=summary)


def _check_rewards(rewards, context) -> None:
    r = np.asarray(rewards)
    if not np.isfinite(r).all() or (r < 0).any() or (r > 1).any():
        raise NumericalError(f"reward outside [0, 1] for prompts {context}")


def _check_tracker(tr: ValueTracker, pid: int) -> None:
    if not (math.isfinite(tr.alpha) and math.isfinite(tr.beta)
            and tr.alpha > 0 and tr.beta > 0):
        raise NumericalError(f"tracker corrupted for prompt {pid}: "
                             f"alpha={tr.alpha}, beta={tr.beta}")


def _build_advantages(variant: str, trajs: list[Trajectory], rewards: np.ndarray,
                      trackers: dict[int, ValueTracker], rl) -> AdvantageSet:
    n = len(trajs)
    T = len(trajs[0].steps)
    if variant == "flow_grpo":
        by_pid: dict[int, list[int]] = {}
        for i, traj in enumerate(trajs):
            by_pid.setdefault(traj.prompt_id, []).append(i)
        traj_adv = np.empty(n)
        for pid, idxs in by_pid.items():
            group = group_advantage(rewards[idxs])
            for i, a in zip(idxs, group):
                traj_adv[i] = a
        mu_b, sigma_b = 0.0, 1.0
    else:
        raw = np.array([raw_advantage(rewards[i], trackers[trajs[i].prompt_id].v_hat)
                        for i in range(n)])
        if rl.per_group_centering:
            by_pid = {}
            for i, traj in enumerate(trajs):
                by_pid.setdefault(traj.prompt_id, []).append(i)
            for idxs in by_pid.values():
                raw[idxs] -= raw[idxs].mean()
        mu_b, sigma_b = float(raw.mean()), float(raw.std())
        traj_adv = np.asarray(normalize_batch_advantages(raw))

    gamma_pow = rl.gamma ** np.arange(T - 1, -1, -1)  # terminal reward discount per step
    step_adv = []
    for i, traj in enumerate(trajs):
        if variant == "superflow":
            # per-step diffusion coefficient, recovered from the recorded std
            sigma = np.array([rec.std / math.sqrt(rec.dt) for rec in traj.steps])
            step_adv.append(rl.eta * sigma * gamma_pow * traj_adv[i])
        else:
            step_adv.append(gamma_pow * traj_adv[i])
    return AdvantageSet(traj_adv=traj_adv, step_adv=step_adv, mu_b=mu_b, sigma_b=sigma_b)


def summarize_run(eval_curve: list[tuple[int, float]], threshold: float) -> dict:
    """Summary statistics recomputable from train_log.csv alone."""
    if not eval_curve:
        return {"final_eval_reward": math.nan, "best_eval_reward": math.nan,
                "rollouts_to_threshold": -1, "max_drawdown_final_third": math.nan,
                "stable": True}
    rewards = [r for _, r in eval_curve]
    rollouts = [c for c, _ in eval_curve]
    to_thresh = -1
    for c, r in eval_curve:
        if r >= threshold:
            to_thresh = c
            break
    n = len(rewards)
    start = 2 * n // 3
    running_max = max(rewards[:start + 1]) if start < n else rewards[-1]
    max_dd = 0.0
    for r in rewards[start:]:
        running_max = max(running_max, r)
        if running_max > 0:
            max_dd = max(max_dd, (running_max - r) / running_max)
    return {
        "final_eval_reward": rewards[-1],
        "best_eval_reward": max(rewards),
        "rollouts_to_threshold": to_thresh,
        "total_rollouts": rollouts[-1],
        "max_drawdown_final_third": max_dd,
        "stable": max_dd <= 0.20,
    }


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as f:
        for k in sorted(summary):
            f.write(f"{k} = {summary[k]}\n")


def read_train_log(path) -> dict[str, list]:
    """Parse train_log.csv back into columns (floats where possible)."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    cols: dict[str, list] = {h: [] for h in header}
    for line in lines[1:]:
        for h, val in zip(header, line.split(",")):
            try:
                cols[h].append(float(val))
            except ValueError:
                cols[h].append(val)
    return cols
