"""Command-line harness: seeded runs, aggregation, oracle and matrix reports.

Usage:
    ltos-net train  --config PATH --method {ltos,fixed,independent}
                    [--seeds CSV] [--out DIR] [--episodes N] [--jobs N]
    ltos-net oracle --config PATH [--out DIR]
    ltos-net matrix --config PATH [--out DIR]

Each training seed writes its own metrics CSV; when every seed completes, a
per-episode mean/min/max aggregate (the shaded-curve data) and a final-window
summary line are written next to them. The LTOS_SEED_OFFSET environment
variable shifts every seed. Exit status is 0 only if all runs completed.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

from . import config as config_mod
from . import metrics as metrics_mod
from .oracle_baselines import (analyze_matrix_game, oracle_summary,
                               prisoner_payoff_matrix)
from .trainer import Trainer

TRAIN_METHODS = ("ltos", "fixed", "independent")
METHODS = TRAIN_METHODS + ("oracle", "matrix")


@dataclasses.dataclass
class RunManifest:
    config_path: str
    method: str
    seeds: tuple
    out_dir: str
    episodes: int | None = None
    jobs: int = 1


def parse_config(path) -> config_mod.RunConfig:
    """Read a key=value config file into a validated RunConfig."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        return config_mod.from_text(fh.read())


def _seed_offset() -> int:
    return int(os.environ.get("LTOS_SEED_OFFSET", "0"))


def _one_seed(args):
    config, seed, method, out_dir = args
    mode = {"ltos": "ltos", "fixed": "fixed", "independent": "independent"}[method]
    trainer = Trainer(config, seed, mode=mode)
    table = trainer.train()
    table.write(os.path.join(out_dir, f"{method}_seed{seed}.csv"))
    trainer.save_checkpoints(os.path.join(out_dir, method, str(seed)))
    return seed


def _run_training(manifest: RunManifest, config) -> int:
    os.makedirs(manifest.out_dir, exist_ok=True)
    offset = _seed_offset()
    seeds = [s + offset for s in manifest.seeds]
    jobs = [(config, seed, manifest.method, manifest.out_dir) for seed in seeds]
    failures = 0
    if manifest.jobs > 1:
        with ProcessPoolExecutor(max_workers=manifest.jobs) as pool:
            for job, result in zip(jobs, pool.map(_try_one_seed, jobs)):
                if result is not None:
                    print(f"seed {job[1]} failed:\n{result}", file=sys.stderr)
                    failures += 1
    else:
        for job in jobs:
            result = _try_one_seed(job)
            if result is not None:
                print(f"seed {job[1]} failed:\n{result}", file=sys.stderr)
                failures += 1
    if failures:
        return 1
    tables = [metrics_mod.MetricsTable.read(
        os.path.join(manifest.out_dir, f"{manifest.method}_seed{s}.csv")) for s in seeds]
    metrics_mod.write_aggregate(
        os.path.join(manifest.out_dir, f"{manifest.method}_aggregate.csv"),
        metrics_mod.aggregate(tables))
    finals = [metrics_mod.final_window_mean(t) for t in tables]
    summary_path = os.path.join(manifest.out_dir, f"{manifest.method}_summary.csv")
    with open(summary_path, "w") as fh:
        fh.write("method,n_seeds,final_window_return\n")
        mean = sum(finals) / len(finals)
        fh.write(f"{manifest.method},{len(seeds)},{mean!r}\n")
    print(f"{manifest.method}: final-window return {mean:.4f} over {len(seeds)} seeds")
    return 0


def _try_one_seed(job):
    try:
        _one_seed(job)
        return None
    except Exception:
        return traceback.format_exc()


def _run_oracle(manifest: RunManifest, config) -> int:
    if config.env != "prisoner":
        print("the exact oracle only covers the prisoner corridor", file=sys.stderr)
        return 2
    optimal, n_states, iterations = oracle_summary(config)
    os.makedirs(manifest.out_dir, exist_ok=True)
    path = os.path.join(manifest.out_dir, "oracle_summary.csv")
    with open(path, "w") as fh:
        fh.write("optimal_return,n_states,iterations\n")
        fh.write(f"{optimal!r},{n_states},{iterations}\n")
    print(f"oracle: optimal per-agent return {optimal!r} "
          f"({n_states} states, {iterations} sweeps)")
    return 0


def _run_matrix(manifest: RunManifest, config) -> int:
    game = prisoner_payoff_matrix(config.corridor_end, config.step_cost)
    analysis = analyze_matrix_game(game)
    names = {(0, 0): "CC", (0, 1): "CD", (1, 0): "DC", (1, 1): "DD"}
    os.makedirs(manifest.out_dir, exist_ok=True)
    path = os.path.join(manifest.out_dir, "matrix_analysis.csv")
    with open(path, "w") as fh:
        fh.write("profile,payoff_a,payoff_b,is_nash,is_welfare_optimal,dilemma\n")
        for profile in ((0, 0), (0, 1), (1, 0), (1, 1)):
            pa, pb = game.payoffs[profile]
            fh.write(f"{names[profile]},{pa!r},{pb!r},"
                     f"{profile in analysis.nash},{profile in analysis.welfare},"
                     f"{analysis.dilemma}\n")
    nash = ",".join(names[p] for p in analysis.nash)
    welfare = ",".join(names[p] for p in analysis.welfare)
    print(f"matrix: nash={nash} welfare={welfare} dilemma={analysis.dilemma}")
    return 0


def run(manifest: RunManifest) -> int:
    """Execute a manifest; returns the process exit status."""
    if manifest.method not in METHODS:
        print(f"unknown method {manifest.method!r}; choose from {METHODS}",
              file=sys.stderr)
        return 2
    try:
        config = parse_config(manifest.config_path)
    except (FileNotFoundError, ValueError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return 2
    if manifest.episodes is not None:
        config = dataclasses.replace(config, episodes=manifest.episodes)
    if manifest.method == "oracle":
        return _run_oracle(manifest, config)
    if manifest.method == "matrix":
        return _run_matrix(manifest, config)
    if not manifest.seeds:
        print("training needs at least one seed", file=sys.stderr)
        return 2
    return _run_training(manifest, config)


def _parse_seeds(text):
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ltos-net", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "oracle", "matrix"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--method", default=None)
        p.add_argument("--seeds", default=None)
        p.add_argument("--out", default="runs")
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    method = args.method if args.method is not None else args.command
    if args.command in ("oracle", "matrix"):
        method = args.command
    try:
        seeds = _parse_seeds(args.seeds) if args.seeds else None
    except ValueError:
        print(f"bad seed list {args.seeds!r}", file=sys.stderr)
        return 2
    if seeds is None:
        if method in TRAIN_METHODS:
            try:
                seeds = parse_config(args.config).seeds
            except (FileNotFoundError, ValueError) as exc:
                print(f"bad config: {exc}", file=sys.stderr)
                return 2
        else:
            seeds = ()
    manifest = RunManifest(config_path=args.config, method=method, seeds=tuple(seeds),
                           out_dir=args.out, episodes=args.episodes, jobs=args.jobs)
    return run(manifest)


if __name__ == "__main__":
    sys.exit(main())
