"""KL-constrained natural-gradient policy step on the soft advantage."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from ..core import EstimatorConfig, RolloutBuffer
from ..estimation import estimate_batch
from ..net import AdamState, DualHeadNetwork, adam_step, clip_grad_norm, log_softmax
from .ppo import NonFiniteLoss


class LineSearchFailed(RuntimeError):
    pass


@dataclass
class TrpoUpdateConfig:
    kl_delta: float = 0.07
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_coeff: float = 0.8
    backtrack_steps: int = 10
    kl_margin: float = 1.5
    critic_epochs: int = 4
    critic_minibatch_size: int = 1024
    critic_learning_rate: float = 5e-4
    max_grad_norm: float = 0.5
    popart: bool = True

    def __post_init__(self):
        if self.kl_delta <= 0:
            raise ValueError("kl_delta must be positive")


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray, iters: int,
                       tol: float = 1e-12) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    for _ in range(iters):
        if rr <= tol * tol:
            break
        ap = matvec(p)
        alpha = rr / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def mean_kl(old_logp: np.ndarray, new_logp: np.ndarray) -> float:
    """Mean over states of KL(pi_old || pi_new); inputs are full log-prob tables."""
    return float(np.mean((np.exp(old_logp) * (old_logp - new_logp)).sum(axis=1)))


def fisher_vector_product(net: DualHeadNetwork, obs: np.ndarray, probs: np.ndarray,
                          vec: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Hessian of the mean KL at the old policy applied to ``vec``.

    At the old parameters the KL Hessian equals the Gauss-Newton product
    ``J^T (diag p - p p^T) J`` with ``J`` the logit Jacobian, computed here
    with one forward-mode and one reverse-mode pass.
    """
    direction = np.where(mask, vec, 0.0)
    jv = net.logits_jvp(obs, direction)
    u = probs * (jv - (probs * jv).sum(axis=1, keepdims=True))
    net.forward(obs)
    return np.where(mask, net.backward(dlogits=u / len(obs)), 0.0)


def eapo_trpo_update(net: DualHeadNetwork, critic_opt: AdamState, buffer: RolloutBuffer,
                     est_cfg: EstimatorConfig, trpo_cfg: TrpoUpdateConfig,
                     rng: np.random.Generator) -> Dict[str, float]:
    """One TRPO iteration: natural-gradient policy step, then critic regression.

    A step is accepted only if the empirical mean KL is at most
    ``kl_margin * kl_delta`` and the surrogate does not decrease. When no
    backtracking step qualifies the policy is left unchanged
    (``line_search_failed = 1``); the critics still train.
    """
    diag = {"accepted": 0.0, "kl": 0.0, "surrogate_gain": 0.0, "step_fraction": 0.0,
            "line_search_failed": 0.0, "value_loss": 0.0, "entropy_loss": 0.0,
            "policy_loss": 0.0, "approx_kl": 0.0}
    n = len(buffer)
    if n == 0:
        return diag
    batch = estimate_batch(buffer, est_cfg)
    adv = batch.adv_soft
    obs = buffer.observations
    acts = buffer.actions
    mask = net.policy_mask

    logits, _, _ = net.forward(obs)
    old_logp = log_softmax(logits)
    probs = np.exp(old_logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), acts] = 1.0
    # surrogate mean(r * A); at theta_old its logit gradient is A (1[a] - p) / n
    g = np.where(mask, net.backward(dlogits=adv[:, None] * (onehot - probs) / n), 0.0)
    base_logp = old_logp[np.arange(n), acts]

    def surrogate(params) -> Tuple[float, np.ndarray]:
        lg, _, _ = net.forward(obs, params=params, cache=False)
        lp = log_softmax(lg)
        return float(np.mean(np.exp(lp[np.arange(n), acts] - base_logp) * adv)), lp

    old_params = net.params.copy()
    if np.any(g != 0.0):
        fvp = lambda v: fisher_vector_product(net, obs, probs, v, mask)
        x = conjugate_gradient(lambda v: fvp(v) + trpo_cfg.cg_damping * v, g, trpo_cfg.cg_iters)
        shs = float(x @ fvp(x))
        if shs > 0 and np.isfinite(shs):
            full_step = np.sqrt(2.0 * trpo_cfg.kl_delta / shs) * x
            base_surr = float(np.mean(adv))
            frac = 1.0
            for _ in range(trpo_cfg.backtrack_steps):
                candidate = old_params + frac * full_step
                surr, new_logp = surrogate(candidate)
                kl = mean_kl(old_logp, new_logp)
                if np.isfinite(kl) and kl <= trpo_cfg.kl_margin * trpo_cfg.kl_delta and surr - base_surr >= 0:
                    net.params = candidate
                    diag.update(accepted=1.0, kl=kl, surrogate_gain=surr - base_surr,
                                step_fraction=frac, policy_loss=-surr, approx_kl=kl)
                    break
                frac *= trpo_cfg.backtrack_coeff
            else:
                diag["line_search_failed"] = 1.0
        else:
            diag["line_search_failed"] = 1.0

    if trpo_cfg.popart:
        net.popart_update(batch.target_v, batch.target_h)
    tv = net.popart_v.normalize(batch.target_v)
    th = net.popart_h.normalize(batch.target_h)
    critic_mask = ~mask
    mb = min(trpo_cfg.critic_minibatch_size, n)
    steps = 0
    for _ in range(trpo_cfg.critic_epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            m = len(idx)
            _, v, h = net.forward(obs[idx])
            lv = 0.5 * np.mean((v - tv[idx]) ** 2)
            lh = 0.5 * np.mean((h - th[idx]) ** 2)
            if not np.isfinite(lv + lh):
                raise NonFiniteLoss(f"critic loss became {lv + lh}")
            grad = net.backward(dvalue=(v - tv[idx]) / m, dentropy=est_cfg.c2 * (h - th[idx]) / m)
            grad, _ = clip_grad_norm(np.where(critic_mask, grad, 0.0), trpo_cfg.max_grad_norm)
            net.params = np.where(critic_mask,
                                  adam_step(net.params, grad, critic_opt, trpo_cfg.critic_learning_rate),
                                  net.params)
            diag["value_loss"] += lv
            diag["entropy_loss"] += lh
            steps += 1
    diag["value_loss"] /= max(steps, 1)
    diag["entropy_loss"] /= max(steps, 1)
    return diag
