from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, List, Optional, Tuple

import numpy as np

from ..core import TerminalKind


class EnvError(RuntimeError):
    pass


class ActionOutOfRange(EnvError, ValueError):
    pass


class EpisodeOver(EnvError):
    """Raised when stepping an environment whose episode already ended."""


@dataclass
class EnvStepOutcome:
    observation: np.ndarray
    reward: float
    terminal_kind: TerminalKind = TerminalKind.NONE

    @property
    def done(self) -> bool:
        return self.terminal_kind != TerminalKind.NONE


def goal_reward(t: int, max_steps: int) -> float:
    """Sparse goal reward ``1 - 0.9 t / T`` where ``t`` counts steps taken so far."""
    return 1.0 - 0.9 * t / max_steps


class Env:
    """Minimal single-instance environment interface.

    Subclasses expose ``num_actions``, ``obs_dim`` and a hashable
    ``state_key()``; ``get_state``/``set_state`` round-trip the full
    internal state including the step counter.
    """

    num_actions: int
    obs_dim: int
    max_steps: int
    t: int = 0
    done: bool = False

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: int) -> EnvStepOutcome:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def state_key(self) -> Hashable:
        raise NotImplementedError

    def get_state(self) -> Tuple:
        return (self.state_key(), self.t, self.done)

    def set_state(self, state: Tuple) -> None:
        raise NotImplementedError

    def initial_states(self) -> List[Tuple[Hashable, float]]:
        """Start states (as ``state_key`` values) with their probabilities."""
        raise NotImplementedError

    def agent_cell(self) -> Optional[Tuple[int, int]]:
        return None

    def _check_action(self, action: int) -> int:
        if self.done:
            raise EpisodeOver("episode finished; call reset()")
        a = int(action)
        if not 0 <= a < self.num_actions:
            raise ActionOutOfRange(f"action {action} not in [0, {self.num_actions})")
        return a

    def _finish(self, reward: float, reached_goal: bool) -> EnvStepOutcome:
        if reached_goal:
            kind = TerminalKind.TERMINATED
        elif self.t >= self.max_steps:
            kind = TerminalKind.TRUNCATED
        else:
            kind = TerminalKind.NONE
        self.done = kind != TerminalKind.NONE
        return EnvStepOutcome(self.observe(), reward, kind)
