"""Desk-scale lab for RL fine-tuning of rectified-flow generative models.

A small velocity-field MLP with explicit gradients is pretrained by flow
matching on synthetic 2-D mixtures, then fine-tuned against verifiable
rewards with group-relative or tracker-baseline policy gradients, adaptive
rollout allocation, and step-level advantage re-estimation.
"""

from .flow import (FlowSample, SyntheticDataset, fm_loss_and_grads, interpolate,
                   pretrain, ring_dataset)
from .model import (VelocityModel, init_velocity_model, load_checkpoint,
                    save_checkpoint, velocity)
from .nn import AdamState, MlpParams, NumericalError, adam_step, init_adam, init_mlp, \
    mlp_backward, mlp_forward
from .rewards import (PromptSpec, RewardTask, default_prompt_pool, evaluate_reward,
                      evaluate_reward_batch, oracle_reward_stats)
from .rl import (AdvantageSet, GroupAllocation, RunArtifacts, TrackerConfig,
                 ValueTracker, allocate_rollouts, discounted_advantage,
                 estimate_prompt_kl, forgetting_factor, group_advantage,
                 normalize_batch_advantages, policy_objective, raw_advantage,
                 step_advantage, tracker_init, tracker_update, train,
                 uncertainty_weight)
from .sde import (NoiseSchedule, StepRecord, Trajectory, gaussian_step_kl, ode_rollout,
                  ode_step, rollout, sample_batch, sde_step, sigma_at,
                  step_logprob_under)

__version__ = "0.1.0"
