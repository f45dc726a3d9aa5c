"""Command-line entry point: ``eapo <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checks import format_results, run_oracle_checks
from .core import EstimatorConfig, load_mdp
from .envs import make_env
from .harness import load_config, parse_grid, run_episodes, sweep, train, visitation_heatmap
from .harness.train import summarize_episodes
from .net import load_checkpoint
from .oracle import TabularPolicy, oracle_advantages


def _seeds(text: str) -> List[int]:
    return [int(s) for s in text.replace(" ", "").split(",") if s]


def load_policy(path: Path, num_states: int, num_actions: int, logits: bool = False) -> TabularPolicy:
    """Whitespace-separated ``S x A`` matrix of probabilities (or logits); ``#`` lines skipped."""
    rows = [ln.split() for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    arr = np.array([[float(x) for x in row] for row in rows])
    if arr.shape != (num_states, num_actions):
        raise ValueError(f"policy has shape {arr.shape}, MDP needs {(num_states, num_actions)}")
    return TabularPolicy.from_logits(arr) if logits else TabularPolicy(arr)


def dumps_oracle(sol, num_states: int, num_actions: int) -> str:
    buf = io.StringIO()
    buf.write(f"# J = {sol.j!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state", "action", "v", "v_h", "q", "q_h", "a", "a_h", "a_soft", "a_h_sampled"])
    for s in range(num_states):
        for a in range(num_actions):
            w.writerow([s, a] + [repr(float(x)) for x in (
                sol.v[s], sol.v_h[s], sol.q[s, a], sol.q_h[s, a], sol.a[s, a], sol.a_h[s, a],
                sol.a_soft[s, a], sol.a_h_sampled[s, a])])
    return buf.getvalue()


def _checkpoint_episodes(path: str, episodes: int, seed: int, greedy: bool):
    net, meta = load_checkpoint(path)
    env_name = meta.get("env", "grid_empty")
    return env_name, run_episodes(lambda: make_env(env_name), net, episodes, seed,
                                  round_index=10 ** 6, greedy=greedy)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None or args.out is not None or args.timesteps is not None:
        from .harness import with_overrides
        over = {}
        if args.seed is not None:
            over["run.seed"] = str(args.seed)
        if args.out is not None:
            over["run.out"] = args.out
        if args.timesteps is not None:
            over["run.total_timesteps"] = str(args.timesteps)
        cfg = with_overrides(cfg, over)
    result = train(cfg)
    print(f"wrote {result.out_dir}/metrics.csv ({len(result.rows)} rows)")
    if result.rows:
        last = result.rows[-1]
        print(f"final: return {last.mean_episodic_return:.4f}  "
              f"entropy {last.mean_trajectory_entropy:.3f}  length {last.mean_episode_length:.2f}")
    return 0


def cmd_eval(args) -> int:
    env_name, episodes = _checkpoint_episodes(args.checkpoint, args.episodes, args.seed, args.greedy)
    stats = summarize_episodes(episodes)
    print(f"env {env_name}  episodes {len(episodes)}  mode {'greedy' if args.greedy else 'stochastic'}")
    for key, value in stats.items():
        print(f"{key} = {value!r}")
    return 0


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    grid = parse_grid(Path(args.grid).read_text())
    out = Path(args.out if args.out is not None else base.out)
    path = sweep(base, grid, _seeds(args.seeds), out, final_window=args.window, jobs=args.jobs)
    print(f"wrote {path}")
    return 0


def cmd_oracle_check(args) -> int:
    results = run_oracle_checks(seed=args.seed, num_mdps=args.trials)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_oracle_dump(args) -> int:
    mdp = load_mdp(args.mdp)
    policy = load_policy(Path(args.policy), mdp.num_states, mdp.num_actions, args.logits)
    cfg = EstimatorConfig(gamma_v=args.gamma_v, gamma_h=args.gamma_h, tau=args.tau)
    text = dumps_oracle(oracle_advantages(mdp, policy, cfg), mdp.num_states, mdp.num_actions)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_heatmap(args) -> int:
    env_name, episodes = _checkpoint_episodes(args.checkpoint, args.rollouts, args.seed, args.greedy)
    size = getattr(make_env(env_name), "grid_size", None)
    if size is None:
        print(f"environment {env_name} has no grid", file=sys.stderr)
        return 2
    heat = visitation_heatmap(episodes, size)
    out = Path(args.out)
    out.write_text("".join(",".join(repr(float(x)) for x in row) + "\n" for row in heat))
    stats = summarize_episodes(episodes)
    print(f"wrote {out}  (mean length {stats['mean_episode_length']:.2f}, "
          f"mean trajectory entropy {stats['mean_trajectory_entropy']:.3f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eapo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--timesteps", type=int, help="override total_timesteps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid of overrides times seeds, with a summary table")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--seeds", default="0")
    s.add_argument("--out")
    s.add_argument("--window", type=int, default=3, help="evaluations averaged per run")
    s.add_argument("--jobs", type=int, default=1, help="parallel runs (processes)")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-check", help="randomized gradient and estimator checks")
    o.add_argument("--trials", type=int, default=50, help="random MDPs per suite")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_check)

    d = sub.add_parser("oracle-dump", help="exact values and advantages of a tabular policy")
    d.add_argument("--mdp", required=True)
    d.add_argument("--policy", required=True)
    d.add_argument("--logits", action="store_true", help="policy file holds logits")
    d.add_argument("--gamma-v", type=float, default=0.99)
    d.add_argument("--gamma-h", type=float, default=0.9)
    d.add_argument("--tau", type=float, default=0.0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_oracle_dump)

    h = sub.add_parser("heatmap", help="state-visitation frequencies of a checkpoint")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--rollouts", type=int, default=100)
    h.add_argument("--greedy", action="store_true")
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", default="heatmap.csv")
    h.set_defaults(func=cmd_heatmap)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
