"""Core data types shared by environments, estimators, the oracle and the algorithms."""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np


class MdpError(ValueError):
    """Base class for malformed tabular MDPs."""


class IndexOutOfRange(MdpError):
    pass


class BadDistribution(MdpError):
    pass


class NonAbsorbingTerminal(MdpError):
    pass


class TerminalKind(enum.IntEnum):
    NONE = 0
    TERMINATED = 1
    TRUNCATED = 2


@dataclass(frozen=True, eq=False)
class DeterministicTabularMdp:
    """Finite MDP with a deterministic transition table.

    ``transition[s, a]`` is the next-state index and ``reward[s, a]`` the
    reward collected on that transition. Terminal states are absorbing
    zero-reward self-loops.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_distribution: np.ndarray
    terminal_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=np.int64))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=np.float64))
        object.__setattr__(
            self, "initial_distribution", np.asarray(self.initial_distribution, dtype=np.float64)
        )
        object.__setattr__(self, "terminal_mask", np.asarray(self.terminal_mask, dtype=bool))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def permuted(self, perm: Sequence[int]) -> "DeterministicTabularMdp":
        """Relabel states so that old state ``s`` becomes ``perm[s]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return DeterministicTabularMdp(
            transition=perm[self.transition[inv]],
            reward=self.reward[inv],
            initial_distribution=self.initial_distribution[inv],
            terminal_mask=self.terminal_mask[inv],
        )


def validate_mdp(mdp: DeterministicTabularMdp) -> DeterministicTabularMdp:
    """Check the table invariants and return ``mdp`` unchanged."""
    n, k = mdp.num_states, mdp.num_actions
    if mdp.transition.ndim != 2 or mdp.reward.shape != (n, k):
        raise MdpError(f"reward table shape {mdp.reward.shape} != {(n, k)}")
    if mdp.initial_distribution.shape != (n,) or mdp.terminal_mask.shape != (n,):
        raise MdpError("initial_distribution and terminal_mask must have one entry per state")
    if (mdp.transition < 0).any() or (mdp.transition >= n).any():
        bad = np.argwhere((mdp.transition < 0) | (mdp.transition >= n))[0]
        raise IndexOutOfRange(f"transition[{bad[0]}, {bad[1]}] = {mdp.transition[tuple(bad)]}")
    rho = mdp.initial_distribution
    if (rho < 0).any() or abs(rho.sum() - 1.0) > 1e-12:
        raise BadDistribution(f"initial distribution sums to {rho.sum()!r}")
    if not np.isfinite(mdp.reward).all():
        raise MdpError("non-finite reward")
    for s in np.flatnonzero(mdp.terminal_mask):
        if (mdp.transition[s] != s).any() or (mdp.reward[s] != 0).any():
            raise NonAbsorbingTerminal(f"terminal state {s} is not a zero-reward self-loop")
    return mdp


# Plain-text format:
#   <S> <A>
#   S*A lines "next_state reward", row-major over (state, action)
#   one line with S initial probabilities
#   one line with S terminal flags (0/1)
# Blank lines and lines starting with '#' are ignored.

def dumps_mdp(mdp: DeterministicTabularMdp) -> str:
    out = io.StringIO()
    out.write(f"{mdp.num_states} {mdp.num_actions}\n")
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            out.write(f"{mdp.transition[s, a]} {float(mdp.reward[s, a])!r}\n")
    out.write(" ".join(repr(float(p)) for p in mdp.initial_distribution) + "\n")
    out.write(" ".join(str(int(t)) for t in mdp.terminal_mask) + "\n")
    return out.getvalue()


def loads_mdp(text: str) -> DeterministicTabularMdp:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or len(lines[0]) != 2:
        raise MdpError("missing '<states> <actions>' header")
    n, k = int(lines[0][0]), int(lines[0][1])
    if len(lines) != 1 + n * k + 2:
        raise MdpError(f"expected {3 + n * k} non-comment lines, got {len(lines)}")
    body = lines[1 : 1 + n * k]
    transition = np.array([int(row[0]) for row in body]).reshape(n, k)
    reward = np.array([float(row[1]) for row in body]).reshape(n, k)
    rho = np.array([float(x) for x in lines[1 + n * k]])
    term = np.array([int(x) != 0 for x in lines[2 + n * k]])
    return validate_mdp(DeterministicTabularMdp(transition, reward, rho, term))


def save_mdp(mdp: DeterministicTabularMdp, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path: Union[str, Path]) -> DeterministicTabularMdp:
    return loads_mdp(Path(path).read_text())


@dataclass
class EstimatorConfig:
    """Discounting, temperature and PPO loss weights for the soft advantage pipeline."""

    gamma_v: float = 0.99
    lambda_v: float = 0.95
    gamma_h: float = 0.9
    lambda_h: float = 0.0
    tau: float = 0.003
    clip_epsilon: float = 0.2
    c1: float = 0.5
    c2: float = 1.0
    normalize_advantage: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma_v < 1.0:
            raise ValueError(f"gamma_v must lie in [0, 1), got {self.gamma_v}")
        if not 0.0 <= self.gamma_h <= 1.0:
            raise ValueError(f"gamma_h must lie in [0, 1], got {self.gamma_h}")
        for name in ("lambda_v", "lambda_h"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tau < 0 or self.c1 < 0 or self.c2 < 0:
            raise ValueError("tau, c1 and c2 must be nonnegative")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be positive")


@dataclass
class StepRecord:
    observation: np.ndarray
    action: int
    reward: float
    log_prob: float
    value_pred: float
    entropy_value_pred: float
    terminal_kind: TerminalKind = TerminalKind.NONE
    # critic predictions at the post-step observation; only read when the
    # record closes a truncated episode or a fragment
    bootstrap_value: float = math.nan
    bootstrap_entropy_value: float = math.nan


@dataclass
class RolloutBuffer:
    """Column-oriented store of on-policy step records.

    Records are laid out fragment by fragment (one fragment per environment
    in harness-collected buffers). ``bootstrap_value`` and
    ``bootstrap_entropy_value`` hold the denormalized critic predictions for
    the observation that follows a record; they are only consulted where an
    episode is cut off (truncated records and fragment ends).
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    value_preds: np.ndarray
    entropy_value_preds: np.ndarray
    terminal_kinds: np.ndarray
    bootstrap_value: np.ndarray
    bootstrap_entropy_value: np.ndarray
    fragment_lengths: List[int] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.actions)
        if not self.fragment_lengths and n:
            self.fragment_lengths = [n]
        if sum(self.fragment_lengths) != n:
            raise ValueError("fragment lengths do not cover the buffer")
        for name in ("rewards", "log_probs", "value_preds", "entropy_value_preds",
                     "terminal_kinds", "bootstrap_value", "bootstrap_entropy_value"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if n and (self.log_probs > 0).any():
            raise ValueError("log_prob must be <= 0")

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def empty(cls, obs_dim: int = 0) -> "RolloutBuffer":
        z = np.zeros(0)
        return cls(np.zeros((0, obs_dim)), np.zeros(0, dtype=np.int64), z, z, z, z,
                   np.zeros(0, dtype=np.int8), z, z, [])

    @classmethod
    def from_records(cls, records: Sequence[StepRecord],
                     fragment_lengths: Optional[Sequence[int]] = None) -> "RolloutBuffer":
        if not records:
            return cls.empty()
        return cls(
            observations=np.array([np.asarray(r.observation, dtype=np.float64) for r in records]),
            actions=np.array([r.action for r in records], dtype=np.int64),
            rewards=np.array([r.reward for r in records], dtype=np.float64),
            log_probs=np.array([r.log_prob for r in records], dtype=np.float64),
            value_preds=np.array([r.value_pred for r in records], dtype=np.float64),
            entropy_value_preds=np.array([r.entropy_value_pred for r in records], dtype=np.float64),
            terminal_kinds=np.array([int(r.terminal_kind) for r in records], dtype=np.int8),
            bootstrap_value=np.array([r.bootstrap_value for r in records], dtype=np.float64),
            bootstrap_entropy_value=np.array([r.bootstrap_entropy_value for r in records],
                                             dtype=np.float64),
            fragment_lengths=list(fragment_lengths) if fragment_lengths else [len(records)],
        )

    def records(self) -> List[StepRecord]:
        return [
            StepRecord(self.observations[i], int(self.actions[i]), float(self.rewards[i]),
                       float(self.log_probs[i]), float(self.value_preds[i]),
                       float(self.entropy_value_preds[i]), TerminalKind(int(self.terminal_kinds[i])),
                       float(self.bootstrap_value[i]), float(self.bootstrap_entropy_value[i]))
            for i in range(len(self))
        ]

    def with_rewards(self, rewards: np.ndarray) -> "RolloutBuffer":
        return RolloutBuffer(self.observations, self.actions, np.asarray(rewards, dtype=np.float64),
                             self.log_probs, self.value_preds, self.entropy_value_preds,
                             self.terminal_kinds, self.bootstrap_value,
                             self.bootstrap_entropy_value, list(self.fragment_lengths))

    def with_predictions(self, value_preds, bootstrap_value,
                         entropy_value_preds=None, bootstrap_entropy_value=None) -> "RolloutBuffer":
        return RolloutBuffer(
            self.observations, self.actions, self.rewards, self.log_probs,
            np.asarray(value_preds, dtype=np.float64),
            self.entropy_value_preds if entropy_value_preds is None
            else np.asarray(entropy_value_preds, dtype=np.float64),
            self.terminal_kinds, np.asarray(bootstrap_value, dtype=np.float64),
            self.bootstrap_entropy_value if bootstrap_entropy_value is None
            else np.asarray(bootstrap_entropy_value, dtype=np.float64),
            list(self.fragment_lengths),
        )


Slice = Tuple[int, int, TerminalKind]


def episode_slices(buffer: RolloutBuffer) -> List[Slice]:
    """Partition the buffer into ``(start, end, kind)`` runs, ``end`` inclusive.

    A run ends at a terminated/truncated record or at the end of a fragment,
    in which case its kind is ``TerminalKind.NONE``.
    """
    kinds = np.asarray(buffer.terminal_kinds)
    slices: List[Slice] = []
    offset = 0
    for length in buffer.fragment_lengths:
        start = offset
        stop = offset + length
        for i in np.flatnonzero(kinds[offset:stop]) + offset:
            slices.append((start, int(i), TerminalKind(int(kinds[i]))))
            start = int(i) + 1
        if start < stop:
            slices.append((start, stop - 1, TerminalKind.NONE))
        offset = stop
    return slices


def concat_buffers(buffers: Iterable[RolloutBuffer]) -> RolloutBuffer:
    buffers = [b for b in buffers if len(b)]
    if not buffers:
        return RolloutBuffer.empty()
    cat = lambda name: np.concatenate([getattr(b, name) for b in buffers])
    return RolloutBuffer(
        cat("observations"), cat("actions"), cat("rewards"), cat("log_probs"), cat("value_preds"),
        cat("entropy_value_preds"), cat("terminal_kinds"), cat("bootstrap_value"),
        cat("bootstrap_entropy_value"), [n for b in buffers for n in b.fragment_lengths],
    )
