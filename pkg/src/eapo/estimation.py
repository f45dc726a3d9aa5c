"""Two-stream advantage estimation: task value and trajectory entropy.

Critic predictions stored in the rollout buffer are already denormalized.
Episodes cut off by a time limit or a fragment boundary bootstrap from the
critics evaluated at the following observation; terminated episodes
continue with zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import EstimatorConfig, RolloutBuffer, Slice, TerminalKind, episode_slices


class SliceMismatch(ValueError):
    pass


@dataclass
class AdvantageBatch:
    adv_v: np.ndarray
    adv_h: np.ndarray
    adv_soft: np.ndarray
    target_v: np.ndarray
    target_h: np.ndarray

    def __len__(self) -> int:
        return len(self.adv_soft)


def _continuation(terminal_kind, next_value):
    return np.where(np.asarray(terminal_kind) == TerminalKind.TERMINATED, 0.0, next_value)


def value_td_residual(reward, v_s, v_next, terminal_kind, gamma_v: float):
    """``r + gamma * v_next - v_s``, with ``v_next`` ignored after termination.

    For a truncated step pass the bootstrap prediction as ``v_next``.
    """
    return reward + gamma_v * _continuation(terminal_kind, v_next) - v_s


def entropy_td_residual(log_prob, v_h_s, v_h_next, terminal_kind, gamma_h: float):
    """Entropy residual: the reward slot holds ``-log pi(a_t|s_t)``."""
    return -np.asarray(log_prob) + gamma_h * _continuation(terminal_kind, v_h_next) - v_h_s


def _slice_ends(buffer: RolloutBuffer) -> np.ndarray:
    ends = np.asarray(buffer.terminal_kinds) != TerminalKind.NONE
    idx = np.cumsum(buffer.fragment_lengths) - 1
    ends[idx[idx >= 0]] = True
    return ends


def next_predictions(buffer: RolloutBuffer, preds: np.ndarray, bootstrap: np.ndarray) -> np.ndarray:
    """Prediction at ``s_{t+1}``: the next record's within a slice, else the bootstrap."""
    nxt = np.empty(len(buffer))
    if len(buffer):
        nxt[:-1] = preds[1:]
        ends = _slice_ends(buffer)
        nxt[ends] = bootstrap[ends]
    return nxt


def gae(residuals: np.ndarray, slices: Sequence[Slice], gamma: float, lam: float) -> np.ndarray:
    """Backward recursion ``A_t = delta_t + gamma * lam * A_{t+1}`` inside each slice."""
    residuals = np.asarray(residuals, dtype=np.float64)
    n = len(residuals)
    expected = 0
    stop = np.zeros(n, dtype=bool)
    for start, end, _ in slices:
        if start != expected or end < start or end >= n:
            raise SliceMismatch(f"slice ({start}, {end}) does not continue the partition at {expected}")
        stop[end] = True
        expected = end + 1
    if expected != n:
        raise SliceMismatch(f"slices cover {expected} of {n} residuals")
    adv = np.empty(n)
    decay = gamma * lam
    running = 0.0
    for t in range(n - 1, -1, -1):
        if stop[t]:
            running = 0.0
        running = residuals[t] + decay * running
        adv[t] = running
    return adv


def critic_targets(advantages: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    return np.asarray(advantages) + np.asarray(predictions)


def combine_soft_advantage(adv_v: np.ndarray, adv_h: np.ndarray, tau: float,
                           normalize: bool) -> np.ndarray:
    adv = np.asarray(adv_v) + tau * np.asarray(adv_h)
    return normalize_advantage(adv) if normalize else adv


def normalize_advantage(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean() if len(adv) else adv
    return (adv - adv.mean()) / (adv.std(ddof=1) + 1e-8)


def stream_advantages(buffer: RolloutBuffer, rewards: np.ndarray, preds: np.ndarray,
                      bootstrap: np.ndarray, gamma: float, lam: float,
                      slices: Optional[Sequence[Slice]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """GAE advantages and TD(lambda) targets for one reward stream."""
    slices = episode_slices(buffer) if slices is None else slices
    nxt = next_predictions(buffer, preds, bootstrap)
    delta = value_td_residual(rewards, preds, nxt, buffer.terminal_kinds, gamma)
    adv = gae(delta, slices, gamma, lam)
    return adv, critic_targets(adv, preds)


def estimate_batch(buffer: RolloutBuffer, cfg: EstimatorConfig) -> AdvantageBatch:
    """Both residual streams, both GAE passes, critic targets and the soft advantage."""
    if len(buffer) == 0:
        z = np.zeros(0)
        return AdvantageBatch(z, z, z, z, z)
    slices = episode_slices(buffer)
    adv_v, target_v = stream_advantages(buffer, buffer.rewards, buffer.value_preds,
                                        buffer.bootstrap_value, cfg.gamma_v, cfg.lambda_v, slices)
    adv_h, target_h = stream_advantages(buffer, -buffer.log_probs, buffer.entropy_value_preds,
                                        buffer.bootstrap_entropy_value, cfg.gamma_h, cfg.lambda_h,
                                        slices)
    adv_soft = combine_soft_advantage(adv_v, adv_h, cfg.tau, cfg.normalize_advantage)
    return AdvantageBatch(adv_v, adv_h, adv_soft, target_v, target_h)


def value_only_batch(buffer: RolloutBuffer, cfg: EstimatorConfig,
                     rewards: Optional[np.ndarray] = None) -> AdvantageBatch:
    """Single-stream GAE used by the PPO baselines; entropy fields are zero.

    ``rewards`` overrides the buffer rewards (the entropy-reward baseline
    passes ``r - tau log pi``).
    """
    if len(buffer) == 0:
        z = np.zeros(0)
        return AdvantageBatch(z, z, z, z, z)
    rewards = buffer.rewards if rewards is None else rewards
    adv_v, target_v = stream_advantages(buffer, rewards, buffer.value_preds,
                                        buffer.bootstrap_value, cfg.gamma_v, cfg.lambda_v)
    adv = normalize_advantage(adv_v) if cfg.normalize_advantage else adv_v
    zeros = np.zeros(len(buffer))
    return AdvantageBatch(adv_v, zeros, adv, target_v, zeros)


def entropy_reward_batch(buffer: RolloutBuffer, cfg: EstimatorConfig) -> AdvantageBatch:
    """Naive MaxEnt baseline: fold ``-tau log pi`` into the reward, one value stream."""
    return value_only_batch(buffer, cfg, rewards=buffer.rewards - cfg.tau * buffer.log_probs)
