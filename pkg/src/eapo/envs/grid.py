"""Fully observed gridworlds modelled on MiniGrid's Empty-8x8 and DoorKey-8x8.

Coordinates follow MiniGrid: ``x`` grows to the right, ``y`` grows
downwards, the outer ring of cells is wall, and headings are
0 = east, 1 = south, 2 = west, 3 = north.
"""
from __future__ import annotations

from typing import Hashable, List, Optional, Tuple

import numpy as np

from .base import Env, EnvStepOutcome, goal_reward

DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))

TURN_LEFT, TURN_RIGHT, FORWARD, PICKUP, DROP, TOGGLE, DONE = range(7)


class GridEmptyEnv(Env):
    """Empty room, start at (1, 1) facing east, goal at (size-2, size-2).

    With ``modified_turns`` (the default) the two turn actions also advance
    one cell in the new heading; a wall ahead leaves the agent in place
    with the new heading. Actions 3..6 consume a step and do nothing.
    """

    num_actions = 7

    def __init__(self, grid_size: int = 8, max_steps: int = 256, modified_turns: bool = True):
        if grid_size < 4:
            raise ValueError("grid_size must be at least 4")
        self.grid_size = grid_size
        self.max_steps = max_steps
        self.modified_turns = modified_turns
        self.inner = grid_size - 2
        self.obs_dim = 2 * self.inner + 4
        self.goal = (grid_size - 2, grid_size - 2)
        self.reset()

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        self.x, self.y, self.heading = 1, 1, 0
        self.t = 0
        self.done = False
        return self.observe()

    def _advance(self) -> None:
        dx, dy = DIR_VEC[self.heading]
        nx, ny = self.x + dx, self.y + dy
        if 1 <= nx <= self.grid_size - 2 and 1 <= ny <= self.grid_size - 2:
            self.x, self.y = nx, ny

    def step(self, action: int) -> EnvStepOutcome:
        a = self._check_action(action)
        self.t += 1
        if a == TURN_LEFT or a == TURN_RIGHT:
            self.heading = (self.heading + (1 if a == TURN_RIGHT else -1)) % 4
            if self.modified_turns:
                self._advance()
        elif a == FORWARD:
            self._advance()
        at_goal = (self.x, self.y) == self.goal
        reward = goal_reward(self.t, self.max_steps) if at_goal else 0.0
        return self._finish(reward, at_goal)

    def observe(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[self.x - 1] = 1.0
        obs[self.inner + self.y - 1] = 1.0
        obs[2 * self.inner + self.heading] = 1.0
        return obs

    def state_key(self) -> Hashable:
        return (self.x, self.y, self.heading)

    def set_state(self, state: Tuple) -> None:
        (self.x, self.y, self.heading), self.t, self.done = state

    def initial_states(self) -> List[Tuple[Hashable, float]]:
        return [((1, 1, 0), 1.0)]

    def is_goal_key(self, key: Hashable) -> bool:
        return key[:2] == self.goal

    def agent_cell(self) -> Tuple[int, int]:
        return (self.x, self.y)


class DoorKeyLiteEnv(Env):
    """Fixed-layout two-room gridworld with a key and a locked door.

    A wall column at ``x = 3`` splits the 6x6 interior; the door sits at
    (3, 3) and the key at (1, 5). Turns do not move the agent. ``pickup``
    takes the key while standing on its cell; ``toggle`` opens the door
    when the agent holds the key and faces the door from an adjacent cell.
    Drop and done are no-ops.
    """

    num_actions = 7
    grid_size = 8
    wall_x = 3
    door = (3, 3)
    key = (1, 5)
    goal = (6, 6)

    def __init__(self, max_steps: int = 256):
        self.max_steps = max_steps
        self.inner = self.grid_size - 2
        self.obs_dim = 2 * self.inner + 4 + 2
        self.reset()

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        self.x, self.y, self.heading = 1, 1, 0
        self.has_key = False
        self.door_open = False
        self.t = 0
        self.done = False
        return self.observe()

    def _passable(self, x: int, y: int) -> bool:
        if not (1 <= x <= self.grid_size - 2 and 1 <= y <= self.grid_size - 2):
            return False
        if x == self.wall_x:
            return (x, y) == self.door and self.door_open
        return True

    def step(self, action: int) -> EnvStepOutcome:
        a = self._check_action(action)
        self.t += 1
        dx, dy = DIR_VEC[self.heading]
        front = (self.x + dx, self.y + dy)
        if a == TURN_LEFT:
            self.heading = (self.heading - 1) % 4
        elif a == TURN_RIGHT:
            self.heading = (self.heading + 1) % 4
        elif a == FORWARD:
            if self._passable(*front):
                self.x, self.y = front
        elif a == PICKUP:
            if (self.x, self.y) == self.key and not self.has_key:
                self.has_key = True
        elif a == TOGGLE:
            if front == self.door and self.has_key:
                self.door_open = True
        at_goal = (self.x, self.y) == self.goal
        reward = goal_reward(self.t, self.max_steps) if at_goal else 0.0
        return self._finish(reward, at_goal)

    def observe(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[self.x - 1] = 1.0
        obs[self.inner + self.y - 1] = 1.0
        obs[2 * self.inner + self.heading] = 1.0
        obs[2 * self.inner + 4] = float(self.has_key)
        obs[2 * self.inner + 5] = float(self.door_open)
        return obs

    def state_key(self) -> Hashable:
        return (self.x, self.y, self.heading, self.has_key, self.door_open)

    def set_state(self, state: Tuple) -> None:
        (self.x, self.y, self.heading, self.has_key, self.door_open), self.t, self.done = state

    def initial_states(self) -> List[Tuple[Hashable, float]]:
        return [((1, 1, 0, False, False), 1.0)]

    def is_goal_key(self, key: Hashable) -> bool:
        return key[:2] == self.goal

    def agent_cell(self) -> Tuple[int, int]:
        return (self.x, self.y)
