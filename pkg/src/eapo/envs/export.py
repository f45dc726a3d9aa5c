"""Enumerate an environment's reachable states into a tabular MDP."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Optional, Tuple

import numpy as np

from ..core import DeterministicTabularMdp, TerminalKind
from .base import Env
from .grid import GridEmptyEnv
from .tabular import TabularEnv

MAX_EXPORT_STATES = 200_000

TERMINATED_STATE = "terminated"
TRUNCATED_STATE = "truncated"


class StateSpaceTooLarge(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ExportedMdp(DeterministicTabularMdp):
    """Tabular MDP plus the environment state behind each index.

    ``states[i]`` is the environment ``state_key`` (paired with the step
    counter when time-augmented) or one of the absorbing labels
    ``"terminated"``/``"truncated"``. ``observations[i]`` is the
    environment observation in that state (zeros for absorbing states).
    """

    states: tuple = ()
    observations: Optional[np.ndarray] = None
    time_augmented: bool = False

    def index_of(self, key: Hashable) -> int:
        return self._index[key]

    @property
    def goal_states(self) -> Tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.states) if s == TERMINATED_STATE)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})


def export_tabular(env: Env, time_augmented: bool = False,
                   max_states: int = MAX_EXPORT_STATES) -> DeterministicTabularMdp:
    """Breadth-first enumeration of the states reachable from ``env``'s start.

    Without ``time_augmented`` every transition is evaluated with the step
    counter at zero, so goal rewards are those of a first step and time-limit
    truncation never fires; this is an approximation of the episodic reward.
    With ``time_augmented`` the step counter is part of the state and the
    tabular dynamics reproduce the environment exactly, truncation included.

    A :class:`TabularEnv` without time augmentation exports to its own MDP.
    """
    if isinstance(env, TabularEnv) and not time_augmented:
        return env.mdp

    saved = env.get_state()
    nodes = []
    index = {}
    queue = deque()

    def node_id(node):
        if node not in index:
            if len(nodes) >= max_states:
                raise StateSpaceTooLarge(f"more than {max_states} reachable states")
            index[node] = len(nodes)
            nodes.append(node)
            queue.append(node)
        return index[node]

    starts = []
    for key, p in env.initial_states():
        starts.append((node_id((key, 0) if time_augmented else key), p))

    rows = []  # (next node or absorbing label, reward) per action
    obs = []
    try:
        while queue:
            node = queue.popleft()
            key, t = node if time_augmented else (node, 0)
            env.set_state((key, t, False))
            obs.append(env.observe())
            row = []
            for a in range(env.num_actions):
                env.set_state((key, t, False))
                out = env.step(a)
                if out.terminal_kind == TerminalKind.TERMINATED:
                    row.append((TERMINATED_STATE, out.reward))
                elif out.terminal_kind == TerminalKind.TRUNCATED:
                    row.append((TRUNCATED_STATE, out.reward))
                else:
                    nxt = (env.state_key(), env.t) if time_augmented else env.state_key()
                    node_id(nxt)
                    row.append((nxt, out.reward))
            rows.append(row)
    finally:
        env.set_state(saved)

    labels = [lab for lab in (TERMINATED_STATE, TRUNCATED_STATE)
              if any(r[0] == lab for row in rows for r in row)]
    n = len(nodes) + len(labels)
    if n > max_states:
        raise StateSpaceTooLarge(f"{n} states exceeds cap {max_states}")
    all_states = nodes + labels
    lookup = {s: i for i, s in enumerate(all_states)}
    k = env.num_actions
    transition = np.empty((n, k), dtype=np.int64)
    reward = np.zeros((n, k))
    for i, row in enumerate(rows):
        for a, (nxt, r) in enumerate(row):
            transition[i, a] = lookup[nxt]
            reward[i, a] = r
    for lab in labels:
        transition[lookup[lab]] = lookup[lab]
    rho = np.zeros(n)
    for i, p in starts:
        rho[i] += p
    terminal = np.zeros(n, dtype=bool)
    terminal[len(nodes):] = True
    observations = np.vstack(obs + [np.zeros((len(labels), env.obs_dim))])
    return ExportedMdp(transition, reward, rho, terminal, states=tuple(all_states),
                       observations=observations, time_augmented=time_augmented)


def shortest_path_length(mdp: DeterministicTabularMdp, targets: Iterable[int]) -> Optional[int]:
    """Fewest transitions from any start state to any state in ``targets``."""
    targets = set(int(t) for t in targets)
    start = np.flatnonzero(mdp.initial_distribution > 0)
    dist = {int(s): 0 for s in start}
    queue = deque(int(s) for s in start)
    while queue:
        s = queue.popleft()
        if s in targets:
            return dist[s]
        for nxt in mdp.transition[s]:
            nxt = int(nxt)
            if nxt not in dist:
                dist[nxt] = dist[s] + 1
                queue.append(nxt)
    return None


def optimal_steps(env: Optional[Env] = None) -> int:
    """Minimum number of steps to reach the goal, by BFS over the exported MDP."""
    env = env if env is not None else GridEmptyEnv()
    exported = export_tabular(env)
    if isinstance(exported, ExportedMdp):
        goals = exported.goal_states
    else:
        goals = np.flatnonzero(exported.terminal_mask)
    steps = shortest_path_length(exported, goals)
    if steps is None:
        raise RuntimeError("goal unreachable")
    return steps


def bisimulation_mismatches(env: Env, exported: ExportedMdp, num_pairs: int,
                            rng: np.random.Generator) -> int:
    """Count random (state, action) pairs where env and table disagree.

    Compared per pair: next state, reward (exact), and whether the episode
    ended with the same terminal kind.
    """
    live = np.flatnonzero(~exported.terminal_mask)
    saved = env.get_state()
    mismatches = 0
    try:
        for _ in range(num_pairs):
            i = int(rng.choice(live))
            a = int(rng.integers(env.num_actions))
            node = exported.states[i]
            key, t = node if exported.time_augmented else (node, 0)
            env.set_state((key, t, False))
            out = env.step(a)
            j = int(exported.transition[i, a])
            if out.reward != exported.reward[i, a]:
                mismatches += 1
            elif out.terminal_kind == TerminalKind.TERMINATED:
                mismatches += exported.states[j] != TERMINATED_STATE
            elif out.terminal_kind == TerminalKind.TRUNCATED:
                mismatches += exported.states[j] != TRUNCATED_STATE
            else:
                expect = (env.state_key(), env.t) if exported.time_augmented else env.state_key()
                mismatches += exported.states[j] != expect
    finally:
        env.set_state(saved)
    return int(mismatches)
