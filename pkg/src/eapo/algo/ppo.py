"""Clipped-surrogate updates: EAPO-PPO and the two PPO baselines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..core import EstimatorConfig, RolloutBuffer
from ..estimation import AdvantageBatch, entropy_reward_batch, estimate_batch, value_only_batch
from ..net import AdamState, DualHeadNetwork, adam_step, clip_grad_norm, log_softmax


class NonFiniteRatio(FloatingPointError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class PpoUpdateConfig:
    epochs: int = 4
    minibatch_size: int = 1024
    max_grad_norm: float = 0.5
    learning_rate: float = 5e-4
    popart: bool = True
    debug_checks: bool = False

    def __post_init__(self):
        if self.epochs <= 0 or self.minibatch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, minibatch_size and learning_rate must be positive")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive")


def ppo_policy_objective(log_prob_new: np.ndarray, log_prob_old: np.ndarray, adv: np.ndarray,
                         clip_epsilon: float, debug: bool = False):
    """Mean clipped surrogate and its gradient with respect to ``log_prob_new``.

    Samples whose clipped branch is the smaller one contribute no gradient.
    """
    ratio = np.exp(log_prob_new - log_prob_old)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteRatio("probability ratio overflowed; the policy has diverged")
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    terms = np.minimum(unclipped, clipped)
    if debug:
        assert np.all(terms <= unclipped), "clipped surrogate exceeded the unclipped term"
    n = len(adv)
    active = unclipped <= clipped
    grad = np.where(active, unclipped, 0.0) / n
    return float(terms.mean()), grad


def entropy_logit_grad(probs: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """d H(softmax(z)) / dz, row-wise."""
    ent = -(probs * logp).sum(axis=1, keepdims=True)
    return -probs * (logp + ent)


def ppo_loss_and_grad(net: DualHeadNetwork, obs: np.ndarray, actions: np.ndarray,
                      old_log_probs: np.ndarray, adv: np.ndarray, target_v: np.ndarray,
                      target_h: np.ndarray, est_cfg: EstimatorConfig, entropy_coef: float = 0.0,
                      train_entropy_head: bool = True, debug: bool = False,
                      params: Optional[np.ndarray] = None):
    """Minibatch loss ``-surrogate - entropy_coef * H + c1 * (L_V + c2 * L_H)`` and its gradient.

    Targets are in normalized critic space. Returns ``(loss, grad, parts)``.
    """
    m = len(actions)
    logits, v, h = net.forward(obs, params=params)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[np.arange(m), actions]
    obj, dobj = ppo_policy_objective(logp, old_log_probs, adv, est_cfg.clip_epsilon, debug)
    ent = -(probs * logp_all).sum(axis=1)
    lv = 0.5 * np.mean((v - target_v) ** 2)
    lh = 0.5 * np.mean((h - target_h) ** 2) if train_entropy_head else 0.0
    loss = -obj - entropy_coef * ent.mean() + est_cfg.c1 * (lv + est_cfg.c2 * lh)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")

    onehot = np.zeros_like(probs)
    onehot[np.arange(m), actions] = 1.0
    dlogits = -dobj[:, None] * (onehot - probs)
    if entropy_coef:
        dlogits = dlogits - entropy_coef * entropy_logit_grad(probs, logp_all) / m
    dv = est_cfg.c1 * (v - target_v) / m
    dh = est_cfg.c1 * est_cfg.c2 * (h - target_h) / m if train_entropy_head else np.zeros(m)
    if params is not None:
        saved, net.params = net.params, params
        try:
            grad = net.backward(dlogits, dv, dh)
        finally:
            net.params = saved
    else:
        grad = net.backward(dlogits, dv, dh)
    parts = {"policy_loss": -obj, "value_loss": float(lv), "entropy_loss": float(lh),
             "mean_state_entropy": float(ent.mean()), "log_ratio": logp - old_log_probs}
    return float(loss), grad, parts


def ppo_update(net: DualHeadNetwork, opt: AdamState, buffer: RolloutBuffer, batch: AdvantageBatch,
               est_cfg: EstimatorConfig, ppo_cfg: PpoUpdateConfig, rng: np.random.Generator,
               entropy_coef: float = 0.0, train_entropy_head: bool = True) -> Dict[str, float]:
    """Shared PPO machinery for all clipped-surrogate variants.

    Minimizes ``-surrogate - entropy_coef * H + c1 * (L_V + c2 * L_H)`` over
    shuffled minibatches, with both critic losses in PopArt-normalized
    space. On a non-finite loss the network and optimizer are restored and
    :class:`NonFiniteLoss` is raised.
    """
    n = len(buffer)
    diag = {"policy_loss": 0.0, "value_loss": 0.0, "entropy_loss": 0.0, "approx_kl": 0.0,
            "clip_fraction": 0.0, "mean_state_entropy": 0.0, "grad_norm": 0.0}
    if n == 0:
        return diag
    saved_params = net.params.copy()
    saved_opt = AdamState(opt.m.copy(), opt.v.copy(), opt.t)
    saved_stats = (net.popart_v, net.popart_h)

    if ppo_cfg.popart:
        net.popart_update(batch.target_v, batch.target_h if train_entropy_head else None)
    tv = net.popart_v.normalize(batch.target_v)
    th = net.popart_h.normalize(batch.target_h)

    mb = min(ppo_cfg.minibatch_size, n)
    count = 0
    try:
        for _ in range(ppo_cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, mb):
                idx = order[start:start + mb]
                _, grad, parts = ppo_loss_and_grad(
                    net, buffer.observations[idx], buffer.actions[idx], buffer.log_probs[idx],
                    batch.adv_soft[idx], tv[idx], th[idx], est_cfg, entropy_coef,
                    train_entropy_head, ppo_cfg.debug_checks)
                grad, gnorm = clip_grad_norm(grad, ppo_cfg.max_grad_norm)
                net.params = adam_step(net.params, grad, opt, ppo_cfg.learning_rate)

                log_ratio = parts["log_ratio"]
                diag["policy_loss"] += parts["policy_loss"]
                diag["value_loss"] += parts["value_loss"]
                diag["entropy_loss"] += parts["entropy_loss"]
                diag["approx_kl"] += float(np.mean(np.expm1(log_ratio) - log_ratio))
                diag["clip_fraction"] += float(np.mean(np.abs(np.exp(log_ratio) - 1) > est_cfg.clip_epsilon))
                diag["mean_state_entropy"] += parts["mean_state_entropy"]
                diag["grad_norm"] += gnorm
                count += 1
    except (NonFiniteLoss, NonFiniteRatio):
        net.params = saved_params
        opt.m, opt.v, opt.t = saved_opt.m, saved_opt.v, saved_opt.t
        net.popart_v, net.popart_h = saved_stats
        raise
    return {k: val / count for k, val in diag.items()}


def eapo_ppo_update(net: DualHeadNetwork, opt: AdamState, buffer: RolloutBuffer,
                    est_cfg: EstimatorConfig, ppo_cfg: PpoUpdateConfig, rng: np.random.Generator,
                    train_entropy_head: bool = True) -> Dict[str, float]:
    """PPO on the soft advantage with a trained entropy critic and no entropy bonus.

    ``train_entropy_head=False`` detaches the entropy head: no PopArt
    update and no entropy-critic gradient.
    """
    batch = estimate_batch(buffer, est_cfg)
    return ppo_update(net, opt, buffer, batch, est_cfg, ppo_cfg, rng,
                      train_entropy_head=train_entropy_head)


def baseline_ppo_entropy_bonus(net: DualHeadNetwork, opt: AdamState, buffer: RolloutBuffer,
                               est_cfg: EstimatorConfig, ppo_cfg: PpoUpdateConfig,
                               rng: np.random.Generator, c_ent: float) -> Dict[str, float]:
    """Plain PPO on the task advantage plus ``c_ent`` times the mean visited-state entropy."""
    batch = value_only_batch(buffer, est_cfg)
    return ppo_update(net, opt, buffer, batch, est_cfg, ppo_cfg, rng, entropy_coef=c_ent,
                      train_entropy_head=False)


def baseline_entropy_reward_ppo(net: DualHeadNetwork, opt: AdamState, buffer: RolloutBuffer,
                                est_cfg: EstimatorConfig, ppo_cfg: PpoUpdateConfig,
                                rng: np.random.Generator) -> Dict[str, float]:
    """Plain PPO with reward ``r - tau log pi`` and a single value critic."""
    batch = entropy_reward_batch(buffer, est_cfg)
    return ppo_update(net, opt, buffer, batch, est_cfg, ppo_cfg, rng, train_entropy_head=False)
