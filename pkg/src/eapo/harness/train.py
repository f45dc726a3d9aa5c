"""Training loop, evaluation, CSV logging and sweeps."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..algo import (NonFiniteLoss, NonFiniteRatio, baseline_entropy_reward_ppo,
                    baseline_ppo_entropy_bonus, eapo_ppo_update, eapo_trpo_update)
from ..envs import make_env
from ..net import AdamState, DualHeadNetwork, save_checkpoint
from .config import RunConfig, dumps_config, with_overrides
from .rollout import Episode, VecCollector, rng_stream, run_episodes, trajectory_entropy

log = logging.getLogger(__name__)

METRICS_VERSION = "eapo-metrics v1"
METRICS_FIELDS = ["global_step", "mean_episodic_return", "mean_trajectory_entropy",
                  "mean_episode_length", "policy_loss", "value_loss", "entropy_loss", "approx_kl"]


@dataclass
class MetricsRow:
    global_step: int
    mean_episodic_return: float
    mean_trajectory_entropy: float
    mean_episode_length: float
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy_loss: float = 0.0
    approx_kl: float = 0.0
    wall_clock_seconds: float = 0.0


class TrainingDiverged(RuntimeError):
    pass


def summarize_episodes(episodes: Sequence[Episode]) -> Dict[str, float]:
    if not episodes:
        return {"mean_episodic_return": math.nan, "mean_trajectory_entropy": math.nan,
                "mean_episode_length": math.nan}
    return {
        "mean_episodic_return": float(np.mean([e.reward_sum for e in episodes])),
        "mean_trajectory_entropy": float(np.mean([trajectory_entropy(e) for e in episodes])),
        "mean_episode_length": float(np.mean([e.length for e in episodes])),
    }


def build_network(cfg: RunConfig, obs_dim: int, num_actions: int) -> DualHeadNetwork:
    init_seed = int(rng_stream(cfg.seed, "init").integers(2 ** 63))
    return DualHeadNetwork(obs_dim, num_actions, cfg.hidden,
                           shared_trunk=cfg.algo != "eapo_trpo", seed=init_seed)


@dataclass
class TrainResult:
    net: DualHeadNetwork
    rows: List[MetricsRow]
    updates: List[Dict[str, float]] = field(default_factory=list)
    out_dir: Optional[Path] = None


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: Path, rows: Sequence[MetricsRow]) -> None:
    """Metrics CSV: version comment line, header, one row per evaluation.

    Wall-clock time is kept out of this file (it goes to ``timing.csv``)
    so that the metrics are a pure function of config and seed.
    """
    buf = io.StringIO()
    buf.write(f"# {METRICS_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_FIELDS)
    for row in rows:
        d = asdict(row)
        writer.writerow([_format(d[k]) for k in METRICS_FIELDS])
    path.write_text(buf.getvalue())


def read_metrics_csv(path: Path) -> List[Dict[str, float]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(lines)]


def train(cfg: RunConfig, out_dir: Optional[Path] = None, write: bool = True,
          on_update=None) -> TrainResult:
    """Alternate rollout collection and policy updates until ``total_timesteps``.

    Every ``eval_every`` environment steps (and at the end) ``eval_episodes``
    stochastic episodes are run on fresh environments and a metrics row is
    appended. Results depend only on the config.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    probe = make_env(cfg.env)
    net = build_network(cfg, probe.obs_dim, probe.num_actions)
    opt = AdamState.zeros(net.num_params)
    update_rng = rng_stream(cfg.seed, "update")
    collector = VecCollector([make_env(cfg.env) for _ in range(cfg.num_envs)], cfg.seed)
    rows: List[MetricsRow] = []
    updates: List[Dict[str, float]] = []
    timings = []
    start = time.perf_counter()
    global_step = 0
    next_eval = cfg.eval_every
    num_updates = cfg.total_timesteps // cfg.batch_size
    last_diag: Dict[str, float] = {}
    eval_round = 0

    def evaluate():
        nonlocal eval_round
        episodes = run_episodes(lambda: make_env(cfg.env), net, cfg.eval_episodes, cfg.seed,
                                round_index=eval_round)
        eval_round += 1
        stats = summarize_episodes(episodes)
        row = MetricsRow(global_step=global_step, **stats,
                         policy_loss=float(last_diag.get("policy_loss", 0.0)),
                         value_loss=float(last_diag.get("value_loss", 0.0)),
                         entropy_loss=float(last_diag.get("entropy_loss", 0.0)),
                         approx_kl=float(last_diag.get("approx_kl", 0.0)),
                         wall_clock_seconds=time.perf_counter() - start)
        rows.append(row)
        timings.append((global_step, row.wall_clock_seconds))
        log.info("step %d return %.4f entropy %.3f length %.2f", global_step,
                 row.mean_episodic_return, row.mean_trajectory_entropy, row.mean_episode_length)

    for _ in range(num_updates):
        buffer = collector.collect(net, cfg.num_steps)
        global_step += len(buffer)
        try:
            if cfg.algo == "eapo_ppo":
                last_diag = eapo_ppo_update(net, opt, buffer, cfg.estimator, cfg.ppo, update_rng)
            elif cfg.algo == "ppo_entbonus":
                last_diag = baseline_ppo_entropy_bonus(net, opt, buffer, cfg.estimator, cfg.ppo,
                                                       update_rng, cfg.c_ent)
            elif cfg.algo == "ppo_entreward":
                last_diag = baseline_entropy_reward_ppo(net, opt, buffer, cfg.estimator, cfg.ppo,
                                                        update_rng)
            else:
                last_diag = eapo_trpo_update(net, opt, buffer, cfg.estimator, cfg.trpo, update_rng)
        except (NonFiniteLoss, NonFiniteRatio) as exc:
            raise TrainingDiverged(f"non-finite loss at global step {global_step}: {exc}") from exc
        last_diag = dict(last_diag, global_step=global_step)
        updates.append(last_diag)
        if on_update is not None:
            on_update(net, last_diag)
        if global_step >= next_eval:
            evaluate()
            while next_eval <= global_step:
                next_eval += cfg.eval_every
    if num_updates and (not rows or rows[-1].global_step != global_step):
        evaluate()

    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", rows)
        (out / "timing.csv").write_text(
            "global_step,wall_clock_seconds\n" + "".join(f"{s},{w:.3f}\n" for s, w in timings))
        (out / "config.ini").write_text(dumps_config(cfg))
        save_checkpoint(out / "checkpoint.bin", net,
                        {"env": cfg.env, "algo": cfg.algo, "seed": cfg.seed,
                         "global_step": global_step})
    return TrainResult(net, rows, updates, out if write else None)


# -- sweeps -------------------------------------------------------------------

def parse_grid(text: str) -> Dict[str, List[str]]:
    """Grid file: one ``section.key = v1, v2, ...`` line per swept key.

    ``#`` starts a comment; an optional ``[grid]`` header is ignored.
    """
    grid: Dict[str, List[str]] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        key, _, values = line.partition("=")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not key.strip() or not vals:
            raise ValueError(f"bad grid line: {raw!r}")
        grid[key.strip()] = vals
    if not grid:
        raise ValueError("grid is empty")
    return grid


def confidence_interval(values: Sequence[float]):
    """Mean and 95% half-width ``1.96 * s / sqrt(n)`` (sample std, ddof=1)."""
    arr = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if len(arr) == 0:
        return math.nan, math.nan
    if len(arr) == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(1.96 * arr.std(ddof=1) / math.sqrt(len(arr)))


SUMMARY_METRICS = ("mean_episodic_return", "mean_trajectory_entropy", "mean_episode_length")


def sweep(base: RunConfig, grid: Dict[str, List[str]], seeds: Sequence[int], out_dir: Path,
          final_window: int = 3, jobs: int = 1) -> Path:
    """Run every grid point for every seed and write ``summary.csv``.

    Each run writes into ``out_dir/<point>/seed<k>/``. A failing run is
    recorded in the summary's ``failed_seeds`` column and the sweep goes on.
    The representative seed of a point is the one whose final-window
    trajectory entropy is closest to the across-seed mean (lowest seed on ties).
    """
    out_dir = Path(out_dir)
    keys = list(grid)
    points = list(itertools.product(*(grid[k] for k in keys)))
    tasks = []
    for values in points:
        name = "__".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, values)) or "base"
        for seed in seeds:
            overrides = dict(zip(keys, values))
            overrides["run.seed"] = str(seed)
            tasks.append((name, seed, overrides))

    args = [(base, out_dir, t) for t in tasks]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_task, args))
    else:
        results = [_run_task(a) for a in args]

    header = (["point", *keys, "num_seeds", "failed_seeds", "representative_seed"]
              + [f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "ci95")])
    buf = io.StringIO()
    buf.write(f"# eapo-summary v1; final window = last {final_window} evaluations; "
              "ci95 = 1.96 * sample std / sqrt(n)\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for values in points:
        name = "__".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, values)) or "base"
        per_seed = {}
        failed = []
        for rname, seed, rows, err in results:
            if rname != name:
                continue
            if err is not None or not rows:
                failed.append(str(seed))
                continue
            window = rows[-final_window:]
            per_seed[seed] = {m: float(np.mean([getattr(r, m) for r in window])) for m in SUMMARY_METRICS}
        stats = {m: confidence_interval([v[m] for v in per_seed.values()]) for m in SUMMARY_METRICS}
        rep = ""
        if per_seed:
            target = stats["mean_trajectory_entropy"][0]
            rep = min(sorted(per_seed), key=lambda s: abs(per_seed[s]["mean_trajectory_entropy"] - target))
        row = [name, *values, len(per_seed), ";".join(failed), rep]
        for m in SUMMARY_METRICS:
            row += [repr(stats[m][0]), repr(stats[m][1])]
        writer.writerow(row)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "summary.csv"
    path.write_text(buf.getvalue())
    return path


def _run_task(args):
    base, out_dir, (name, seed, overrides) = args
    try:
        cfg = with_overrides(base, overrides)
        result = train(cfg, Path(out_dir) / name / f"seed{seed}")
        return name, seed, result.rows, None
    except Exception as exc:  # recorded in the summary; the sweep continues
        log.exception("run %s seed %d failed", name, seed)
        return name, seed, None, f"{type(exc).__name__}: {exc}"
