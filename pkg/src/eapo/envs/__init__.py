"""Deterministic discrete environments and their tabular exports."""
from .base import ActionOutOfRange, Env, EnvError, EnvStepOutcome, EpisodeOver, goal_reward
from .export import (ExportedMdp, StateSpaceTooLarge, bisimulation_mismatches, export_tabular,
                     optimal_steps, shortest_path_length)
from .grid import DoorKeyLiteEnv, GridEmptyEnv
from .tabular import BadSize, TabularEnv, chain_mdp, random_tabular_mdp


def make_env(name: str) -> Env:
    """Build an environment from its config name.

    Accepted names: ``grid_empty``, ``grid_empty_unmodified``,
    ``doorkey_lite``, ``chain:<n>:<k>`` and ``random:<seed>:<S>:<A>``.
    """
    parts = name.strip().split(":")
    kind = parts[0]
    try:
        if kind == "grid_empty" and len(parts) == 1:
            return GridEmptyEnv()
        if kind == "grid_empty_unmodified" and len(parts) == 1:
            return GridEmptyEnv(modified_turns=False)
        if kind == "doorkey_lite" and len(parts) == 1:
            return DoorKeyLiteEnv()
        if kind == "chain" and len(parts) == 3:
            return TabularEnv(chain_mdp(int(parts[1]), int(parts[2])))
        if kind == "random" and len(parts) == 4:
            return TabularEnv(random_tabular_mdp(int(parts[1]), int(parts[2]), int(parts[3])))
    except ValueError as exc:
        raise ValueError(f"bad environment name {name!r}: {exc}") from exc
    raise ValueError(f"unknown environment name {name!r}")


__all__ = [
    "ActionOutOfRange", "BadSize", "DoorKeyLiteEnv", "Env", "EnvError", "EnvStepOutcome",
    "EpisodeOver", "ExportedMdp", "GridEmptyEnv", "StateSpaceTooLarge", "TabularEnv",
    "bisimulation_mismatches", "chain_mdp", "export_tabular", "goal_reward", "make_env",
    "optimal_steps", "random_tabular_mdp", "shortest_path_length",
]
