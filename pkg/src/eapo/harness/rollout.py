"""Seeded RNG streams, on-policy rollout collection and episode metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from ..core import RolloutBuffer, StepRecord, TerminalKind
from ..envs import Env
from ..net import DualHeadNetwork, log_softmax

# Stream purposes. A stream is Philox keyed by SeedSequence(seed, spawn_key=(purpose, index)).
PURPOSES = {"init": 0, "action": 1, "env": 2, "update": 3, "eval_action": 4, "eval_env": 5}


def rng_stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, purpose, index...)``."""
    seq = np.random.SeedSequence(seed, spawn_key=(PURPOSES[purpose], *index))
    return np.random.Generator(np.random.Philox(seq))


class IncompleteEpisode(ValueError):
    pass


@dataclass
class Episode:
    reward_sum: float = 0.0
    log_probs: List[float] = field(default_factory=list)
    cells: List[Tuple[int, int]] = field(default_factory=list)
    terminal_kind: TerminalKind = TerminalKind.NONE

    @property
    def length(self) -> int:
        return len(self.log_probs)


def trajectory_entropy(episode) -> float:
    """Undiscounted sum of ``-log pi(a_t|s_t)`` over a finished episode.

    Accepts an :class:`Episode` or a sequence of :class:`StepRecord`.
    """
    if isinstance(episode, Episode):
        if episode.terminal_kind == TerminalKind.NONE:
            raise IncompleteEpisode("episode has not ended")
        return float(-np.sum(episode.log_probs)) if episode.log_probs else 0.0
    records = list(episode)
    if not records or records[-1].terminal_kind == TerminalKind.NONE:
        raise IncompleteEpisode("episode has not ended")
    return float(-sum(r.log_prob for r in records))


def visitation_heatmap(episodes: Sequence, grid_size: int) -> np.ndarray:
    """Visit frequency per ``(y, x)`` cell over every state visited, summing to 1.

    ``episodes`` holds :class:`Episode` objects or plain lists of ``(x, y)`` cells.
    """
    counts = np.zeros((grid_size, grid_size))
    for ep in episodes:
        cells = ep.cells if isinstance(ep, Episode) else ep
        for x, y in cells:
            counts[y, x] += 1
    total = counts.sum()
    return counts / total if total else counts


def sample_actions(probs: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Inverse-CDF sampling with one uniform draw per row from that row's generator."""
    u = np.array([rng.random() for rng in rngs])
    cdf = np.cumsum(probs, axis=1)
    actions = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(actions, probs.shape[1] - 1)


class VecCollector:
    """Steps ``len(envs)`` environments in lockstep, auto-resetting finished episodes.

    Environment ``i`` draws its actions from stream ``(seed, "action", i)``
    and its resets from ``(seed, "env", i)``, so its trajectory does not
    depend on the other environments.
    """

    def __init__(self, envs: Sequence[Env], seed: int, action_purpose: str = "action",
                 env_purpose: str = "env", stream_offset: int = 0):
        self.envs = list(envs)
        self.action_rngs = [rng_stream(seed, action_purpose, stream_offset + i) for i in range(len(envs))]
        self.env_rngs = [rng_stream(seed, env_purpose, stream_offset + i) for i in range(len(envs))]
        self.obs = np.stack([env.reset(rng) for env, rng in zip(self.envs, self.env_rngs)])
        self.current = [self._new_episode(env) for env in self.envs]
        self.finished: List[Episode] = []

    @staticmethod
    def _new_episode(env: Env) -> Episode:
        ep = Episode()
        cell = env.agent_cell()
        if cell is not None:
            ep.cells.append(cell)
        return ep

    def collect(self, net: DualHeadNetwork, num_steps: int, greedy: bool = False) -> RolloutBuffer:
        n_env = len(self.envs)
        obs_dim = self.obs.shape[1]
        obs = np.zeros((n_env, num_steps, obs_dim))
        actions = np.zeros((n_env, num_steps), dtype=np.int64)
        rewards = np.zeros((n_env, num_steps))
        log_probs = np.zeros((n_env, num_steps))
        values = np.zeros((n_env, num_steps))
        ent_values = np.zeros((n_env, num_steps))
        kinds = np.zeros((n_env, num_steps), dtype=np.int8)
        boot_v = np.full((n_env, num_steps), np.nan)
        boot_h = np.full((n_env, num_steps), np.nan)

        for t in range(num_steps):
            logits, v, h = net.predict(self.obs)
            logp_all = log_softmax(logits)
            if greedy:
                acts = np.argmax(logits, axis=1)
            else:
                acts = sample_actions(np.exp(logp_all), self.action_rngs)
            obs[:, t] = self.obs
            actions[:, t] = acts
            log_probs[:, t] = logp_all[np.arange(n_env), acts]
            values[:, t] = v
            ent_values[:, t] = h
            truncated = []
            for i, env in enumerate(self.envs):
                out = env.step(int(acts[i]))
                rewards[i, t] = out.reward
                kinds[i, t] = out.terminal_kind
                ep = self.current[i]
                ep.reward_sum += out.reward
                ep.log_probs.append(log_probs[i, t])
                cell = env.agent_cell()
                if cell is not None:
                    ep.cells.append(cell)
                if out.done:
                    ep.terminal_kind = out.terminal_kind
                    self.finished.append(ep)
                    if out.terminal_kind == TerminalKind.TRUNCATED:
                        truncated.append((i, out.observation))
                    self.obs[i] = env.reset(self.env_rngs[i])
                    self.current[i] = self._new_episode(env)
                else:
                    self.obs[i] = out.observation
            if truncated:
                idx = [i for i, _ in truncated]
                _, bv, bh = net.predict(np.stack([o for _, o in truncated]))
                boot_v[idx, t] = bv
                boot_h[idx, t] = bh

        _, bv, bh = net.predict(self.obs)
        open_end = kinds[:, -1] == TerminalKind.NONE
        boot_v[open_end, -1] = bv[open_end]
        boot_h[open_end, -1] = bh[open_end]
        flat = lambda a: a.reshape(n_env * num_steps, *a.shape[2:])
        return RolloutBuffer(flat(obs), flat(actions), flat(rewards), flat(log_probs), flat(values),
                             flat(ent_values), flat(kinds), flat(boot_v), flat(boot_h),
                             [num_steps] * n_env)

    def pop_finished(self) -> List[Episode]:
        done, self.finished = self.finished, []
        return done


def collect_rollout(envs: Sequence[Env], net: DualHeadNetwork, num_steps: int, seed: int,
                    greedy: bool = False) -> RolloutBuffer:
    """One-shot collection from freshly reset environments."""
    return VecCollector(envs, seed).collect(net, num_steps, greedy=greedy)


def run_episodes(make_env: Callable[[], Env], net: DualHeadNetwork, num_episodes: int, seed: int,
                 round_index: int = 0, greedy: bool = False) -> List[Episode]:
    """Run ``num_episodes`` complete episodes in parallel, one environment each."""
    if num_episodes == 0:
        return []
    envs = [make_env() for _ in range(num_episodes)]
    action_rngs = [rng_stream(seed, "eval_action", round_index, i) for i in range(num_episodes)]
    env_rngs = [rng_stream(seed, "eval_env", round_index, i) for i in range(num_episodes)]
    obs = np.stack([env.reset(rng) for env, rng in zip(envs, env_rngs)])
    episodes = [VecCollector._new_episode(env) for env in envs]
    live = list(range(num_episodes))
    while live:
        logits, _, _ = net.predict(obs[live])
        logp_all = log_softmax(logits)
        if greedy:
            acts = np.argmax(logits, axis=1)
        else:
            acts = sample_actions(np.exp(logp_all), [action_rngs[i] for i in live])
        still = []
        for j, i in enumerate(live):
            out = envs[i].step(int(acts[j]))
            ep = episodes[i]
            ep.reward_sum += out.reward
            ep.log_probs.append(float(logp_all[j, acts[j]]))
            cell = envs[i].agent_cell()
            if cell is not None:
                ep.cells.append(cell)
            obs[i] = out.observation
            if out.done:
                ep.terminal_kind = out.terminal_kind
            else:
                still.append(i)
        live = still
    return episodes


def buffer_records_by_episode(buffer: RolloutBuffer) -> List[List[StepRecord]]:
    from ..core import episode_slices
    records = buffer.records()
    return [records[s:e + 1] for s, e, _ in episode_slices(buffer)]
