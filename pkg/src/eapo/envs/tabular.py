from __future__ import annotations

from typing import Hashable, List, Optional, Tuple

import numpy as np

from ..core import DeterministicTabularMdp, validate_mdp
from .base import Env, EnvStepOutcome


class BadSize(ValueError):
    pass


def chain_mdp(n: int, k: int) -> DeterministicTabularMdp:
    """Line of ``n`` states; action 0 steps right, the others stay put.

    Entering the last state pays 1 and ends the episode.
    """
    if n < 2 or k < 2:
        raise BadSize(f"chain needs n >= 2 and k >= 2, got n={n}, k={k}")
    transition = np.tile(np.arange(n)[:, None], (1, k))
    transition[:, 0] = np.minimum(np.arange(n) + 1, n - 1)
    reward = np.zeros((n, k))
    reward[n - 2, 0] = 1.0
    transition[n - 1, :] = n - 1
    rho = np.zeros(n)
    rho[0] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[n - 1] = True
    return DeterministicTabularMdp(transition, reward, rho, terminal)


def random_tabular_mdp(seed: int, num_states: int, num_actions: int) -> DeterministicTabularMdp:
    """Random deterministic MDP drawn from ``numpy.random.default_rng(seed)``.

    Draw order: transition table ``integers(0, S, (S, A))``, rewards
    ``uniform(-1, 1, (S, A))``, then the terminal state ``integers(0, S)``.
    The terminal row is overwritten with a zero-reward self-loop and the
    initial distribution is uniform over the remaining states.
    """
    if not (2 <= num_states <= 10 and 1 <= num_actions <= 4):
        raise BadSize("random MDPs need 2 <= states <= 10 and 1 <= actions <= 4")
    rng = np.random.default_rng(seed)
    transition = rng.integers(0, num_states, size=(num_states, num_actions))
    reward = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    terminal_state = int(rng.integers(0, num_states))
    transition[terminal_state] = terminal_state
    reward[terminal_state] = 0.0
    terminal = np.zeros(num_states, dtype=bool)
    terminal[terminal_state] = True
    rho = np.where(terminal, 0.0, 1.0 / (num_states - 1))
    return DeterministicTabularMdp(transition, reward, rho, terminal)


class TabularEnv(Env):
    """Steps a :class:`DeterministicTabularMdp` with one-hot state observations."""

    def __init__(self, mdp: DeterministicTabularMdp, max_steps: int = 256):
        self.mdp = validate_mdp(mdp)
        self.num_actions = mdp.num_actions
        self.obs_dim = mdp.num_states
        self.max_steps = max_steps
        self._support = np.flatnonzero(mdp.initial_distribution > 0)
        self.reset()

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if rng is None:
            self.s = int(self._support[0])
        else:
            self.s = int(rng.choice(self.mdp.num_states, p=self.mdp.initial_distribution))
        self.t = 0
        self.done = False
        return self.observe()

    def step(self, action: int) -> EnvStepOutcome:
        a = self._check_action(action)
        reward = float(self.mdp.reward[self.s, a])
        self.s = int(self.mdp.transition[self.s, a])
        self.t += 1
        return self._finish(reward, bool(self.mdp.terminal_mask[self.s]))

    def observe(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[self.s] = 1.0
        return obs

    def state_key(self) -> Hashable:
        return self.s

    def set_state(self, state: Tuple) -> None:
        self.s, self.t, self.done = state

    def initial_states(self) -> List[Tuple[Hashable, float]]:
        return [(int(s), float(self.mdp.initial_distribution[s])) for s in self._support]

    def is_goal_key(self, key: Hashable) -> bool:
        return bool(self.mdp.terminal_mask[key])
