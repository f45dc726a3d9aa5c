"""Exact dynamic-programming quantities for entropy-regularized deterministic MDPs.

All entropies are in nats. Terminal states are absorbing with zero value;
their rows are removed from the transition operator so that the linear
systems stay nonsingular for a unit discount whenever every trajectory
terminates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .core import DeterministicTabularMdp, EstimatorConfig

DENSE_LIMIT = 2000


class SingularSystem(np.linalg.LinAlgError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TabularPolicy:
    probs: np.ndarray
    logits: Optional[np.ndarray] = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if (self.probs < 0).any() or np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("policy rows must be nonnegative and sum to 1")

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "TabularPolicy":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(softmax(logits), logits)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


PolicyLike = Union[TabularPolicy, np.ndarray]


def _probs(policy: PolicyLike) -> np.ndarray:
    return policy.probs if isinstance(policy, TabularPolicy) else np.asarray(policy, dtype=np.float64)


def _neg_log(probs: np.ndarray) -> np.ndarray:
    """-log pi with the 0 * log 0 = 0 convention baked in (returns 0 where pi = 0)."""
    with np.errstate(divide="ignore"):
        return np.where(probs > 0, -np.log(np.where(probs > 0, probs, 1.0)), 0.0)


def policy_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy of each row, in nats."""
    return (probs * _neg_log(probs)).sum(axis=-1)


def _transition_operator(mdp: DeterministicTabularMdp, probs: np.ndarray):
    """Policy-induced state transition matrix with terminal rows zeroed."""
    n, k = mdp.num_states, mdp.num_actions
    weights = np.where(mdp.terminal_mask[:, None], 0.0, probs)
    rows = np.repeat(np.arange(n), k)
    p = scipy.sparse.csr_matrix((weights.ravel(), (rows, mdp.transition.ravel())), shape=(n, n))
    return p


def _solve(mdp: DeterministicTabularMdp, p, gamma: float, rhs: np.ndarray,
           transpose: bool = False) -> np.ndarray:
    """Solve (I - gamma P) x = rhs, or its transpose."""
    n = mdp.num_states
    if n <= DENSE_LIMIT:
        m = np.eye(n) - gamma * p.toarray()
        if transpose:
            m = m.T
        try:
            lu = scipy.linalg.lu_factor(m, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(str(exc)) from exc
        if np.any(np.abs(np.diag(lu[0])) < 1e-14):
            raise SingularSystem("policy evaluation system is singular")
        return scipy.linalg.lu_solve(lu, rhs)
    m = (scipy.sparse.identity(n, format="csc") - gamma * p).tocsc()
    if transpose:
        m = m.T.tocsc()
    x = scipy.sparse.linalg.spsolve(m, rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("policy evaluation system is singular")
    return x


def solve_value(mdp: DeterministicTabularMdp, policy: PolicyLike,
                gamma_v: float) -> Tuple[np.ndarray, np.ndarray]:
    """Task value ``V`` and action value ``Q`` by a direct linear solve."""
    probs = _probs(policy)
    p = _transition_operator(mdp, probs)
    r_pi = np.where(mdp.terminal_mask, 0.0, (probs * mdp.reward).sum(axis=1))
    v = _solve(mdp, p, gamma_v, r_pi)
    v[mdp.terminal_mask] = 0.0
    q = mdp.reward + gamma_v * v[mdp.transition]
    q[mdp.terminal_mask] = 0.0
    return v, q


def solve_entropy_value(mdp: DeterministicTabularMdp, policy: PolicyLike,
                        gamma_h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Discounted trajectory entropy ``V_H`` and ``Q_H(s, a) = gamma_h V_H(T(s, a))``."""
    probs = _probs(policy)
    p = _transition_operator(mdp, probs)
    h = np.where(mdp.terminal_mask, 0.0, policy_entropy(probs))
    v_h = _solve(mdp, p, gamma_h, h)
    v_h[mdp.terminal_mask] = 0.0
    q_h = gamma_h * v_h[mdp.transition]
    q_h[mdp.terminal_mask] = 0.0
    return v_h, q_h


def soft_objective(mdp: DeterministicTabularMdp, policy: PolicyLike, cfg: EstimatorConfig) -> float:
    """``E_{s0 ~ rho}[V(s0) + tau V_H(s0)]``."""
    v, _ = solve_value(mdp, policy, cfg.gamma_v)
    total = v
    if cfg.tau != 0.0:
        v_h, _ = solve_entropy_value(mdp, policy, cfg.gamma_h)
        total = v + cfg.tau * v_h
    return float(mdp.initial_distribution @ total)


@dataclass
class OracleSolution:
    v: np.ndarray
    v_h: np.ndarray
    q: np.ndarray
    q_h: np.ndarray
    a: np.ndarray
    a_h: np.ndarray
    a_soft: np.ndarray
    j: float
    # E[delta_H | s, a] = -log pi(a|s) + Q_H(s, a) - V_H(s): the quantity the
    # sampled entropy residual estimates, and the one the exact gradient uses
    a_h_sampled: Optional[np.ndarray] = None
    a_soft_sampled: Optional[np.ndarray] = None


def oracle_advantages(mdp: DeterministicTabularMdp, policy: PolicyLike,
                      cfg: EstimatorConfig) -> OracleSolution:
    probs = _probs(policy)
    v, q = solve_value(mdp, probs, cfg.gamma_v)
    v_h, q_h = solve_entropy_value(mdp, probs, cfg.gamma_h)
    live = ~mdp.terminal_mask[:, None]
    ent = policy_entropy(probs)
    a = np.where(live, q - v[:, None], 0.0)
    a_h = np.where(live, q_h - v_h[:, None] + ent[:, None], 0.0)
    a_h_sampled = np.where(live, q_h - v_h[:, None] + _neg_log(probs), 0.0)
    j = float(mdp.initial_distribution @ (v + cfg.tau * v_h))
    return OracleSolution(v=v, v_h=v_h, q=q, q_h=q_h, a=a, a_h=a_h, a_soft=a + cfg.tau * a_h, j=j,
                          a_h_sampled=a_h_sampled, a_soft_sampled=a + cfg.tau * a_h_sampled)


def discounted_occupancy(mdp: DeterministicTabularMdp, policy: PolicyLike, gamma: float) -> np.ndarray:
    """``d(s) = sum_t gamma^t Pr(s_t = s)`` with ``s_0 ~ rho``."""
    probs = _probs(policy)
    p = _transition_operator(mdp, probs)
    d = _solve(mdp, p, gamma, mdp.initial_distribution, transpose=True)
    return d


def _logit_gradient(probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_a pi(a|s) W(s, a) d log pi(a|s) / d logit(s, b)`` for softmax rows."""
    baseline = (probs * weights).sum(axis=1, keepdims=True)
    return probs * (weights - baseline)


def exact_soft_policy_gradient(mdp: DeterministicTabularMdp, logits: np.ndarray,
                               cfg: EstimatorConfig) -> np.ndarray:
    """Gradient of the soft objective with respect to tabular softmax logits.

    The task term is weighted by the ``gamma_v``-discounted state occupancy
    and the entropy term by the ``gamma_h``-discounted one. The entropy
    advantage used here is ``-log pi(a|s) + Q_H(s, a) - V_H(s)``; swapping in
    ``Q_H - E_pi[Q_H]`` instead drops the gradient of the local policy
    entropy (see :func:`mean_entropy_advantage_gradient`).
    """
    policy = TabularPolicy.from_logits(logits)
    sol = oracle_advantages(mdp, policy, cfg)
    d_v = discounted_occupancy(mdp, policy, cfg.gamma_v)
    weights = d_v[:, None] * sol.a
    if cfg.tau != 0.0:
        d_h = discounted_occupancy(mdp, policy, cfg.gamma_h)
        weights = weights + cfg.tau * d_h[:, None] * sol.a_h_sampled
    grad = _logit_gradient(policy.probs, weights)
    grad[mdp.terminal_mask] = 0.0
    return grad


def mean_entropy_advantage_gradient(mdp: DeterministicTabularMdp, logits: np.ndarray,
                                    cfg: EstimatorConfig) -> np.ndarray:
    """Occupancy-weighted gradient built on ``A_H = Q_H - E_pi[Q_H]``.

    Differs from :func:`exact_soft_policy_gradient` by
    ``tau * d_H(s) * grad H(pi(.|s))`` at every state; kept to measure that gap.
    """
    policy = TabularPolicy.from_logits(logits)
    sol = oracle_advantages(mdp, policy, cfg)
    d_v = discounted_occupancy(mdp, policy, cfg.gamma_v)
    d_h = discounted_occupancy(mdp, policy, cfg.gamma_h)
    weights = d_v[:, None] * sol.a + cfg.tau * d_h[:, None] * sol.a_h
    grad = _logit_gradient(policy.probs, weights)
    grad[mdp.terminal_mask] = 0.0
    return grad


def approximate_soft_policy_gradient(mdp: DeterministicTabularMdp, logits: np.ndarray,
                                     cfg: EstimatorConfig, visitation_discount: float = 1.0) -> np.ndarray:
    """Practical-estimator expectation: ``E[sum_t A_soft(s_t, a_t) grad log pi]``.

    Both advantage streams share one state weighting, the visitation
    occupancy under ``visitation_discount`` (1.0 = undiscounted, episodic
    MDPs only), instead of their own ``gamma^t`` occupancies.
    """
    policy = TabularPolicy.from_logits(logits)
    sol = oracle_advantages(mdp, policy, cfg)
    d = discounted_occupancy(mdp, policy, visitation_discount)
    grad = _logit_gradient(policy.probs, d[:, None] * sol.a_soft_sampled)
    grad[mdp.terminal_mask] = 0.0
    return grad


def vanilla_policy_gradient(mdp: DeterministicTabularMdp, logits: np.ndarray,
                            gamma_v: float) -> np.ndarray:
    """Gradient of ``rho . V`` by forward sensitivity of the Bellman system.

    For each logit the derivative of the policy-induced reward vector and
    transition matrix is formed explicitly and pushed through
    ``(I - gamma P) dV = dr + gamma dP V``; no advantages or occupancies
    are involved.
    """
    probs = softmax(np.asarray(logits, dtype=np.float64))
    n, k = probs.shape
    live = ~mdp.terminal_mask
    p = np.zeros((n, n))
    for s in np.flatnonzero(live):
        for a in range(k):
            p[s, mdp.transition[s, a]] += probs[s, a]
    r_pi = np.where(live, (probs * mdp.reward).sum(axis=1), 0.0)
    m = np.eye(n) - gamma_v * p
    v = np.linalg.solve(m, r_pi)
    grad = np.zeros((n, k))
    for s in np.flatnonzero(live):
        for b in range(k):
            dpi = probs[s] * ((np.arange(k) == b) - probs[s, b])
            dr = np.zeros(n)
            dr[s] = dpi @ mdp.reward[s]
            dp = np.zeros((n, n))
            for a in range(k):
                dp[s, mdp.transition[s, a]] += dpi[a]
            dv = np.linalg.solve(m, dr + gamma_v * dp @ v)
            grad[s, b] = mdp.initial_distribution @ dv
    return grad


def finite_difference_gradient(mdp: Optional[DeterministicTabularMdp], logits: np.ndarray,
                               cfg: Optional[EstimatorConfig], h: float = 1e-5,
                               objective: Optional[Callable[[np.ndarray], float]] = None) -> np.ndarray:
    """Central differences of the soft objective (or ``objective``) per logit."""
    if h <= 0:
        raise ValueError("h must be positive")
    if objective is None:
        objective = lambda theta: soft_objective(mdp, TabularPolicy.from_logits(theta), cfg)
    logits = np.asarray(logits, dtype=np.float64)
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        plus = logits.copy()
        minus = logits.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (objective(plus) - objective(minus)) / (2 * h)
    return grad


def gradient_error(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-8) -> float:
    """Largest componentwise ``|g - ref| / max(|ref|, floor)``."""
    return float(np.max(np.abs(analytic - reference) / np.maximum(np.abs(reference), floor)))
