"""Randomized checks of the estimators and gradients against the exact oracle.

Used by the ``oracle-check`` subcommand and by the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import EstimatorConfig, RolloutBuffer, TerminalKind, episode_slices
from .envs import chain_mdp, random_tabular_mdp
from .estimation import (entropy_td_residual, estimate_batch, next_predictions,
                         value_td_residual)
from .oracle import (TabularPolicy, exact_soft_policy_gradient, finite_difference_gradient,
                     gradient_error, oracle_advantages, solve_entropy_value)


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


def random_problem(rng: np.random.Generator, max_states: int = 10, max_actions: int = 4):
    s = int(rng.integers(2, max_states + 1))
    a = int(rng.integers(1, max_actions + 1))
    mdp = random_tabular_mdp(int(rng.integers(2 ** 31)), s, a)
    logits = rng.normal(size=(s, a))
    return mdp, logits


def gradient_suite(num_mdps: int = 50, seed: int = 0, taus=(0.0, 0.05, 0.5),
                   gamma_hs=(0.8, 0.99), gamma_v: float = 0.99, h: float = 1e-5) -> CheckResult:
    """Worst relative error of the exact soft gradient against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    count = 0
    for _ in range(num_mdps):
        mdp, logits = random_problem(rng)
        for tau in taus:
            for gamma_h in gamma_hs:
                cfg = EstimatorConfig(gamma_v=gamma_v, gamma_h=gamma_h, tau=tau)
                g = exact_soft_policy_gradient(mdp, logits, cfg)
                fd = finite_difference_gradient(mdp, logits, cfg, h=h)
                worst = max(worst, gradient_error(g, fd))
                count += 1
    return CheckResult("soft policy gradient vs finite differences", worst, 1e-4,
                       f"{count} (mdp, tau, gamma_h) cases, h={h}")


def identity_suite(num_mdps: int = 50, seed: int = 1) -> List[CheckResult]:
    """Bellman identities of the entropy value and mean-zero advantages."""
    rng = np.random.default_rng(seed)
    eq3 = eq4 = mean_zero = 0.0
    for _ in range(num_mdps):
        mdp, logits = random_problem(rng)
        cfg = EstimatorConfig(gamma_h=float(rng.uniform(0.5, 0.99)), tau=float(rng.uniform(0, 1)))
        pol = TabularPolicy.from_logits(logits)
        sol = oracle_advantages(mdp, pol, cfg)
        live = ~mdp.terminal_mask
        eq3 = max(eq3, float(np.max(np.abs(sol.q_h - np.where(live[:, None],
                                                           cfg.gamma_h * sol.v_h[mdp.transition], 0.0)))))
        rhs = (pol.probs * (-np.log(pol.probs) + sol.q_h)).sum(axis=1)
        eq4 = max(eq4, float(np.max(np.abs((sol.v_h - rhs)[live]))))
        mz = np.concatenate([(pol.probs * sol.a).sum(axis=1), (pol.probs * sol.a_h).sum(axis=1)])
        mean_zero = max(mean_zero, float(np.max(np.abs(mz))))
    one_state = single_state_uniform_mdp(4)
    v_h, _ = solve_entropy_value(one_state, TabularPolicy.uniform(1, 4), 0.9)
    closed = abs(v_h[0] - np.log(4) / (1 - 0.9))
    return [
        CheckResult("Q_H = gamma_H V_H(T(s,a))", eq3, 0.0, "exact equality"),
        CheckResult("V_H = sum_a pi (-log pi + Q_H)", eq4, 1e-10),
        CheckResult("advantages are mean-zero under pi", mean_zero, 1e-10),
        CheckResult("one-state uniform V_H = ln 4 / (1 - gamma_H)", closed, 1e-10),
    ]


def single_state_uniform_mdp(num_actions: int):
    from .core import DeterministicTabularMdp
    return DeterministicTabularMdp(np.zeros((1, num_actions), dtype=np.int64),
                                   np.zeros((1, num_actions)), np.ones(1), np.zeros(1, dtype=bool))


# -- estimator against oracle ---------------------------------------------------

def oracle_rollout(mdp, probs: np.ndarray, num_steps: int, rng: np.random.Generator,
                   cfg: EstimatorConfig, max_steps: int = 10_000) -> Tuple[RolloutBuffer, np.ndarray]:
    """On-policy steps in a tabular MDP with oracle values injected as critic predictions.

    Returns the buffer (one fragment, ending wherever ``num_steps`` runs out)
    and the state visited at each step.
    """
    sol = oracle_advantages(mdp, probs, cfg)
    n_s = mdp.num_states
    eye = np.eye(n_s)
    states = np.empty(num_steps, dtype=np.int64)
    actions = np.empty(num_steps, dtype=np.int64)
    rewards = np.empty(num_steps)
    kinds = np.zeros(num_steps, dtype=np.int8)
    boot_v = np.full(num_steps, np.nan)
    boot_h = np.full(num_steps, np.nan)
    cdf = np.cumsum(probs, axis=1)
    s = int(rng.choice(n_s, p=mdp.initial_distribution))
    t_ep = 0
    for t in range(num_steps):
        a = min(int(np.searchsorted(cdf[s], rng.random() * cdf[s, -1], side="right")),
                mdp.num_actions - 1)
        states[t], actions[t] = s, a
        rewards[t] = mdp.reward[s, a]
        nxt = int(mdp.transition[s, a])
        t_ep += 1
        if mdp.terminal_mask[nxt]:
            kinds[t] = TerminalKind.TERMINATED
        elif t_ep >= max_steps:
            kinds[t] = TerminalKind.TRUNCATED
        if kinds[t] == TerminalKind.NONE and t < num_steps - 1:
            s = nxt
            continue
        boot_v[t], boot_h[t] = sol.v[nxt], sol.v_h[nxt]
        if kinds[t] != TerminalKind.NONE:
            s = int(rng.choice(n_s, p=mdp.initial_distribution))
            t_ep = 0
    buffer = RolloutBuffer(eye[states], actions, rewards, np.log(probs[states, actions]),
                           sol.v[states], sol.v_h[states], kinds, boot_v, boot_h, [num_steps])
    return buffer, states


def clustered_mean_and_se(values: np.ndarray, clusters: np.ndarray) -> Tuple[float, float]:
    """Sample mean with a standard error that treats whole episodes as independent units."""
    n = len(values)
    mean = float(values.mean())
    if n < 2:
        return mean, np.inf
    sums = np.bincount(clusters, weights=values - mean)
    groups = np.count_nonzero(np.bincount(clusters))
    var = float(np.sum(sums ** 2)) / n ** 2 * (groups / max(groups - 1, 1))
    return mean, np.sqrt(var)


def estimator_vs_oracle(num_steps: int = 100_000, seed: int = 2, lambda_h: float = 0.9,
                        lambda_v: float = 0.5, se_floor: float = 1e-9) -> Dict[str, object]:
    """Per-(s, a) sample means of both GAE streams against the oracle advantages.

    Uniform policy on ``chain_mdp(5, 3)``; with a uniform policy the sampled
    ``-log pi`` equals the state entropy, so the entropy advantage table is
    the one defined with the policy-entropy term. Returns the largest
    ``|mean - oracle| / se`` for each stream and the per-pair table.
    """
    mdp = chain_mdp(5, 3)
    probs = np.full((5, 3), 1 / 3)
    cfg = EstimatorConfig(gamma_v=0.9, lambda_v=lambda_v, gamma_h=0.9, lambda_h=lambda_h,
                          tau=0.01, normalize_advantage=False)
    sol = oracle_advantages(mdp, probs, cfg)
    buffer, states = oracle_rollout(mdp, probs, num_steps, np.random.default_rng(seed), cfg)
    batch = estimate_batch(buffer, cfg)
    episode_id = np.zeros(len(buffer), dtype=np.int64)
    for k, (s0, e0, _) in enumerate(episode_slices(buffer)):
        episode_id[s0:e0 + 1] = k
    rows = []
    worst = {"adv_h": 0.0, "adv_v": 0.0}
    for s in np.flatnonzero(~mdp.terminal_mask):
        for a in range(mdp.num_actions):
            sel = (states == s) & (buffer.actions == a)
            for name, oracle_table in (("adv_h", sol.a_h), ("adv_v", sol.a)):
                mean, se = clustered_mean_and_se(getattr(batch, name)[sel], episode_id[sel])
                z = abs(mean - oracle_table[s, a]) / max(se, se_floor)
                worst[name] = max(worst[name], z)
                rows.append((name, int(s), a, int(sel.sum()), mean, float(oracle_table[s, a]), se, z))
    return {"worst_z_h": worst["adv_h"], "worst_z_v": worst["adv_v"], "rows": rows,
            "num_steps": len(buffer)}


def gae_lambda_zero_is_residual(seed: int = 3, n: int = 500) -> float:
    """Largest |GAE(lambda=0) - delta| on a random buffer (should be exactly 0)."""
    rng = np.random.default_rng(seed)
    buffer = random_buffer(rng, n)
    cfg = EstimatorConfig(lambda_v=0.0, lambda_h=0.0, normalize_advantage=False)
    batch = estimate_batch(buffer, cfg)
    nv = next_predictions(buffer, buffer.value_preds, buffer.bootstrap_value)
    nh = next_predictions(buffer, buffer.entropy_value_preds, buffer.bootstrap_entropy_value)
    dv = value_td_residual(buffer.rewards, buffer.value_preds, nv, buffer.terminal_kinds, cfg.gamma_v)
    dh = entropy_td_residual(buffer.log_probs, buffer.entropy_value_preds, nh,
                             buffer.terminal_kinds, cfg.gamma_h)
    return float(max(np.max(np.abs(batch.adv_v - dv)), np.max(np.abs(batch.adv_h - dh))))


def gae_lambda_one_is_monte_carlo(seed: int = 4, n: int = 500) -> float:
    """Largest gap between GAE(lambda=1) and discounted return minus baseline,
    over every step of every terminated episode, summed by brute force."""
    rng = np.random.default_rng(seed)
    buffer = random_buffer(rng, n, terminate_only=True)
    cfg = EstimatorConfig(gamma_v=0.97, lambda_v=1.0, gamma_h=0.8, lambda_h=1.0,
                          normalize_advantage=False)
    batch = estimate_batch(buffer, cfg)
    worst = 0.0
    for start, end, kind in episode_slices(buffer):
        if kind != TerminalKind.TERMINATED:
            continue
        for t in range(start, end + 1):
            steps = np.arange(end - t + 1)
            mc_v = np.sum(cfg.gamma_v ** steps * buffer.rewards[t:end + 1])
            mc_h = np.sum(cfg.gamma_h ** steps * -buffer.log_probs[t:end + 1])
            worst = max(worst, abs(batch.adv_v[t] - (mc_v - buffer.value_preds[t])),
                        abs(batch.adv_h[t] - (mc_h - buffer.entropy_value_preds[t])))
    return float(worst)


def random_buffer(rng: np.random.Generator, n: int, terminate_only: bool = False,
                  obs_dim: int = 3) -> RolloutBuffer:
    """Random rewards, log-probs and predictions with random episode ends."""
    u = rng.random(n)
    kinds = np.where(u < 0.08, TerminalKind.TERMINATED, TerminalKind.NONE).astype(np.int8)
    if not terminate_only:
        kinds[(u >= 0.08) & (u < 0.12)] = TerminalKind.TRUNCATED
    else:
        kinds[-1] = TerminalKind.TERMINATED
    boot_v = np.where(kinds == TerminalKind.TRUNCATED, rng.normal(size=n), np.nan)
    boot_h = np.where(kinds == TerminalKind.TRUNCATED, rng.uniform(0, 3, size=n), np.nan)
    if kinds[-1] == TerminalKind.NONE:
        boot_v[-1], boot_h[-1] = rng.normal(), rng.uniform(0, 3)
    return RolloutBuffer(rng.normal(size=(n, obs_dim)), rng.integers(0, 3, size=n),
                         rng.normal(size=n), np.log(rng.uniform(0.05, 1.0, size=n)),
                         rng.normal(size=n), rng.uniform(0, 3, size=n), kinds, boot_v, boot_h, [n])


def run_oracle_checks(seed: int = 0, quick: bool = False,
                      num_mdps: Optional[int] = None) -> List[CheckResult]:
    if num_mdps is None:
        num_mdps = 10 if quick else 50
    results = [gradient_suite(num_mdps=num_mdps, seed=seed)]
    results += identity_suite(num_mdps=num_mdps, seed=seed + 1)
    results.append(CheckResult("GAE(lambda=0) equals the TD residual", gae_lambda_zero_is_residual(seed + 3),
                               0.0, "exact equality"))
    results.append(CheckResult("GAE(lambda=1) equals Monte-Carlo minus baseline",
                               gae_lambda_one_is_monte_carlo(seed + 4), 1e-6))
    est = estimator_vs_oracle(num_steps=20_000 if quick else 100_000, seed=seed + 2)
    results.append(CheckResult("entropy advantage sample means vs oracle (z)", est["worst_z_h"], 4.0,
                               f"{est['num_steps']} steps, chain_mdp(5,3), clustered SE"))
    results.append(CheckResult("task advantage sample means vs oracle (z)", est["worst_z_v"], 4.0,
                               f"{est['num_steps']} steps, chain_mdp(5,3), clustered SE"))
    return results


def network_soft_objective(net, exported, cfg: EstimatorConfig) -> float:
    """Oracle soft objective of a network policy on an exported tabular MDP."""
    from .net import log_softmax
    from .oracle import soft_objective
    logits, _, _ = net.forward(exported.observations, cache=False)
    return soft_objective(exported, np.exp(log_softmax(logits)), cfg)


def format_results(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  {'value':>12}  {'tolerance':>10}  result"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {r.value:12.3e}  {r.tolerance:10.1e}  "
                     f"{'PASS' if r.passed else 'FAIL'}" + (f"  ({r.detail})" if r.detail else ""))
    return "\n".join(lines)
