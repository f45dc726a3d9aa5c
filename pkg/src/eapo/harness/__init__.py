from .config import ConfigError, RunConfig, dumps_config, load_config, with_overrides
from .rollout import (Episode, IncompleteEpisode, VecCollector, collect_rollout, rng_stream,
                      run_episodes, trajectory_entropy, visitation_heatmap)
from .train import MetricsRow, TrainResult, TrainingDiverged, parse_grid, sweep, train

__all__ = [
    "ConfigError", "Episode", "IncompleteEpisode", "MetricsRow", "RunConfig", "TrainResult",
    "TrainingDiverged", "VecCollector", "collect_rollout", "dumps_config", "load_config",
    "parse_grid", "rng_stream", "run_episodes", "sweep", "train", "trajectory_entropy",
    "visitation_heatmap", "with_overrides",
]
