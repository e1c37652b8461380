"""Command-line experiment front-end.

Subcommands: run (episodes for one config), compare (matrix across configs
that differ only in planner/mode), train (policy optimization), replay
(ASCII rendering of an episode log), map-gen (write a generated map).
Every output directory contains config.json with the exact configuration
and seed needed to regenerate its artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields as dataclass_fields
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    comparable_dict,
    config_to_dict,
    load_config,
)
from .engine import EngineConfig, EpisodeLog, EpisodeResult, run_episode
from .metrics import (
    RESULTS_CSV_COLUMNS,
    RunStats,
    acs,
    aggregate_stats,
    overlap_metric,
    time_to_coverage,
)
from .planners import ApfParams, RrtParams
from .policy import load_checkpoint
from .sources import PlannerSource, PolicySource, RandomGoalSource
from .training import TrainConfig, TrainResult, train
from .worldgen import GridMap, generate_map, spawn_agents


class MismatchedConfigs(ConfigError):
    """Comparison refused: configs differ beyond planner and mode."""


EPISODE_CSV_COLUMNS = ["episode", "map_seed", "time", "acs", "coverage",
                       "overlap", "reason"]


# ---- episode execution ----


def episode_seeds(base_seed: int, index: int) -> tuple[int, int, int]:
    """Map, spawn, and engine seeds for one episode. Derived from the run
    seed and the episode index only, so runs differing in mode or planner
    pair up on identical maps, spawns, and delay draws."""
    child = np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))
    map_seed, spawn_seed, engine_seed = child.generate_state(3)
    return int(map_seed), int(spawn_seed), int(engine_seed)


def build_source(cfg: ExperimentConfig):
    """Instantiate the goal source named by the config, validating
    planner-specific parameters."""
    params = dict(cfg.planner_params)
    if cfg.planner == "random":
        _reject_params(params, {"goal_grid"}, cfg.planner)
        return RandomGoalSource(**params)
    if cfg.planner == "policy":
        _reject_params(params, set(), cfg.planner)
        weights, pcfg = load_checkpoint(cfg.checkpoint)
        return PolicySource(params=weights, cfg=pcfg,
                            deterministic=cfg.deterministic)
    if cfg.planner == "rrt":
        allowed = {f.name for f in dataclass_fields(RrtParams)}
        _reject_params(params, allowed, cfg.planner)
        return PlannerSource(planner="rrt", rrt_params=RrtParams(**params))
    if cfg.planner == "apf":
        allowed = {f.name for f in dataclass_fields(ApfParams)}
        _reject_params(params, allowed, cfg.planner)
        return PlannerSource(planner="apf", apf_params=ApfParams(**params))
    _reject_params(params, {"ig_radius"}, cfg.planner)
    return PlannerSource(planner=cfg.planner, **params)


def _reject_params(params: dict, allowed: set, planner: str) -> None:
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(
            f"unknown [planner.params] key(s) for {planner!r}: {sorted(unknown)}"
        )


def episode_grid(cfg: ExperimentConfig, map_seed: int) -> GridMap:
    if cfg.map_file:
        return GridMap.load(cfg.map_file)
    return generate_map(replace(cfg.map_spec, seed=map_seed))


def run_one_episode(cfg: ExperimentConfig, index: int) -> tuple[dict, str]:
    """One seeded episode; returns its metrics row and serialized log."""
    map_seed, spawn_seed, engine_seed = episode_seeds(cfg.seed, index)
    grid = episode_grid(cfg, map_seed)
    spawns = spawn_agents(grid, cfg.n_agents, spawn_seed)
    source = build_source(cfg)
    engine_cfg = EngineConfig(
        mode=cfg.mode, delay=cfg.delay, loss=cfg.loss, reward=cfg.reward,
        t_max=cfg.t_max, coverage_target=cfg.coverage_target, seed=engine_seed,
    )
    result = run_episode(
        grid, spawns, source, engine_cfg,
        extra_header={"experiment": config_to_dict(cfg), "episode": index},
    )
    return episode_row(cfg, index, map_seed, result), result.log.dumps()


def episode_row(cfg: ExperimentConfig, index: int, map_seed: int,
                result: EpisodeResult) -> dict:
    state = result.state_at_success or result.final_state
    return {
        "episode": index,
        "map_seed": map_seed,
        "time": time_to_coverage(result.log.events,
                                 cfg.reward.success_threshold),
        "acs": acs(result.log.events, cfg.t_max),
        "coverage": result.coverage,
        "overlap": overlap_metric(state, result.countable),
        "reason": result.terminal_reason,
    }


def _episode_worker(args: tuple) -> tuple[dict, str]:
    cfg, index = args
    return run_one_episode(cfg, index)


def iter_episodes(cfg: ExperimentConfig,
                  jobs: int = 1) -> Iterator[tuple[int, dict, str]]:
    """Episode results in index order; with jobs > 1 the work fans out over
    a process pool but the merge order is still the episode index."""
    indices = range(cfg.episodes)
    if jobs <= 1:
        for i in indices:
            row, text = run_one_episode(cfg, i)
            yield i, row, text
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        work = [(cfg, i) for i in indices]
        for i, (row, text) in zip(indices, pool.map(_episode_worker, work)):
            yield i, row, text


# ---- aggregation and CSV ----


def aggregate_row(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    """One results.csv row. Times for episodes that never reached the
    threshold are censored at t_max before averaging."""
    times = [min(r["time"], cfg.t_max) for r in rows]
    t = aggregate_stats(times)
    o = aggregate_stats([r["overlap"] for r in rows])
    c = aggregate_stats([r["coverage"] for r in rows])
    a = aggregate_stats([r["acs"] for r in rows])
    return {
        "planner": cfg.planner,
        "mode": cfg.mode,
        "map_size": f"{cfg.map_spec.width}x{cfg.map_spec.height}",
        "n_agents": cfg.n_agents,
        "time_mean": t.mean, "time_std": t.std,
        "overlap_mean": o.mean, "overlap_std": o.std,
        "coverage_mean": c.mean, "coverage_std": c.std,
        "acs_mean": a.mean, "acs_std": a.std,
        "episodes": len(rows),
    }


def stats_from_row(row: dict, metric: str) -> RunStats:
    """Rebuild a RunStats from a results.csv row read back as strings."""
    return RunStats(mean=float(row[f"{metric}_mean"]),
                    std=float(row[f"{metric}_std"]),
                    n=int(row["episodes"]))


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _write_provenance(out: Path, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
    (out / "config.json").write_text(text + "\n")


# ---- subcommands ----


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> tuple[Path, Optional[dict]]:
    """Run the configured episodes; write logs, episodes.csv, results.csv."""
    out = Path(cfg.out_dir or "results/run")
    _write_provenance(out, cfg)
    (out / "logs").mkdir(exist_ok=True)
    rows = []
    for index, row, text in iter_episodes(cfg, jobs):
        (out / "logs" / f"episode_{index:05d}.jsonl").write_text(text)
        rows.append(row)
    write_csv(out / "episodes.csv", EPISODE_CSV_COLUMNS, rows)
    summary = aggregate_row(cfg, rows) if rows else None
    write_csv(out / "results.csv", RESULTS_CSV_COLUMNS,
              [summary] if summary else [])
    return out, summary


def cmd_compare(cfgs: list[ExperimentConfig], jobs: int = 1,
                out_dir: Optional[str] = None) -> Path:
    """Run each config and write one comparison.csv row per (planner, mode).

    Configs must agree on everything except planner and mode; episode seeds
    are paired across rows."""
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configs")
    base = comparable_dict(cfgs[0])
    for other in cfgs[1:]:
        if comparable_dict(other) != base:
            raise MismatchedConfigs(
                "configs may differ only in planner and mode; "
                "map, agents, seeds, and rewards must match"
            )
    out = Path(out_dir or cfgs[0].out_dir or "results/compare")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cfg in cfgs:
        sub = replace(cfg, out_dir=str(out / f"{cfg.planner}_{cfg.mode}"))
        _, summary = cmd_run(sub, jobs)
        if summary:
            rows.append(summary)
    write_csv(out / "comparison.csv", RESULTS_CSV_COLUMNS, rows)
    return out


def make_train_config(cfg: ExperimentConfig, out_dir: str) -> TrainConfig:
    return TrainConfig(
        map_spec=cfg.map_spec,
        n_agents=cfg.n_agents,
        policy=cfg.policy,
        hyper=cfg.train.hyper,
        step_max=cfg.train.step_max,
        batch_episodes=cfg.train.batch_episodes,
        eval_every=cfg.train.eval_every,
        eval_episodes=cfg.train.eval_episodes,
        seed=cfg.seed,
        t_max=cfg.t_max,
        reward=cfg.reward,
        delay=cfg.delay,
        out_dir=out_dir,
        resume_from=cfg.train.resume,
    )


def cmd_train(cfg: ExperimentConfig) -> tuple[Path, TrainResult]:
    """Train a goal policy; write checkpoints, curves.csv, eval.csv."""
    if cfg.map_file:
        raise ConfigError("training samples fresh maps; [map] file is not supported")
    out = Path(cfg.out_dir or "results/train")
    _write_provenance(out, cfg)
    result = train(make_train_config(cfg, str(out)))
    return out, result


def render_frames(log: EpisodeLog, every: int = 1) -> list[str]:
    """ASCII frames: '#' wall, '·' explored, ' ' unexplored, digits for
    living agents. One frame per event, or per every-th event plus the
    final one; a log without events renders its initial state only."""
    grid = GridMap.from_ascii(log.header["map"])
    poses = {i: (s[0], s[1]) for i, s in enumerate(log.header["spawns"])}
    alive = dict.fromkeys(poses, True)
    explored: set[tuple[int, int]] = set()

    def frame(label: str) -> str:
        rows = []
        for y in range(grid.height):
            row = []
            for x in range(grid.width):
                if grid.is_wall((x, y)):
                    row.append("#")
                elif (x, y) in explored:
                    row.append("·")
                else:
                    row.append(" ")
            rows.append(row)
        for i in sorted(poses, reverse=True):
            if alive[i]:
                x, y = poses[i]
                rows[y][x] = str(i % 10)
        return label + "\n" + "\n".join("".join(r) for r in rows)

    if not log.events:
        return [frame("t=0.00 initial")]
    frames = []
    total = len(log.events)
    for n, ev in enumerate(log.events, start=1):
        kind = ev["kind"]
        if ev["agent"] in poses:
            if kind in ("init", "forward", "turn_left", "turn_right"):
                poses[ev["agent"]] = tuple(ev["cell"])
            if kind == "death":
                alive[ev["agent"]] = False
        for x, y in ev.get("cells", []):
            explored.add((x, y))
        if n == total or every <= 1 or n % every == 0:
            frames.append(frame(
                f"t={ev['t']:.2f} {kind} agent={ev['agent']} "
                f"ratio={ev['ratio']:.4f}"
            ))
    return frames


def cmd_replay(log_path: str, every: int = 1, stream=None) -> None:
    log = EpisodeLog.load(log_path)
    stream = stream or sys.stdout
    for frame in render_frames(log, every):
        print(frame, file=stream)
        print(file=stream)


def cmd_map_gen(cfg: ExperimentConfig,
                out_dir: Optional[str] = None) -> str:
    grid = generate_map(cfg.map_spec)
    text = grid.to_ascii()
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "map.txt").write_text(text + "\n")
    return text


# ---- argument parsing ----


def _add_common(parser: argparse.ArgumentParser, jobs: bool = False) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="TOML experiment file (defaults when omitted)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override the run seed")
    parser.add_argument("--out", metavar="DIR",
                        help="override the output directory")
    if jobs:
        parser.add_argument("--jobs", type=int, default=1, metavar="N",
                            help="episode worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridexplore",
        description="Multi-agent grid exploration experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run episodes for one configuration")
    _add_common(p, jobs=True)

    p = sub.add_parser("compare",
                       help="matrix of runs differing only in planner/mode")
    p.add_argument("--config", metavar="PATH", action="append", required=True,
                   help="TOML experiment file (repeat per cell)")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--jobs", type=int, default=1, metavar="N")

    p = sub.add_parser("train", help="train a goal policy")
    _add_common(p)

    p = sub.add_parser("replay", help="render an episode log as ASCII frames")
    p.add_argument("log", metavar="LOG", help="episode log (JSON lines)")
    p.add_argument("--every", type=int, default=1, metavar="K",
                   help="render every K-th event (final frame always)")

    p = sub.add_parser("map-gen", help="generate a map and write map.txt")
    _add_common(p)
    return parser


def _load(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_config(path)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _override(_load(args.config), args)
            out, _ = cmd_run(cfg, jobs=args.jobs)
            print(f"wrote {out}")
        elif args.command == "compare":
            cfgs = [_override(_load(p), args, keep_out=False)
                    for p in args.config]
            out = cmd_compare(cfgs, jobs=args.jobs, out_dir=args.out)
            print(f"wrote {out}")
        elif args.command == "train":
            cfg = _override(_load(args.config), args)
            out, result = cmd_train(cfg)
            print(f"wrote {out} ({result.total_steps} macro steps)")
        elif args.command == "replay":
            cmd_replay(args.log, every=args.every)
        elif args.command == "map-gen":
            cfg = _override(_load(args.config), args, map_seed=True)
            text = cmd_map_gen(cfg, out_dir=args.out)
            if not args.out:
                print(text)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _override(cfg: ExperimentConfig, args: argparse.Namespace,
              keep_out: bool = True, map_seed: bool = False) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
        if map_seed:
            cfg = replace(cfg, map_spec=replace(cfg.map_spec, seed=args.seed))
    if keep_out and getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


if __name__ == "__main__":
    sys.exit(main())
