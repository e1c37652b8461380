"""Reward formulas and the evaluation metric suite.

All area quantities (coverage ratio, overlap, reward cell counts) are in
units of reachable free cells; walls and unreachable pockets never enter the
accounting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .perception import ExplorationState


@dataclass(frozen=True)
class RewardConfig:
    team_coverage_coeff: float = 0.02
    individual_coverage_coeff: float = 0.01
    overlap_coeff: float = 0.01
    success_threshold: float = 98.0  # percent
    overlap_cutoff: float = 0.9


def coverage_reward(new_team_cells: int, new_individual_cells: int,
                    cfg: RewardConfig) -> float:
    """Team plus individual contribution for newly explored cells."""
    return (
        cfg.team_coverage_coeff * new_team_cells
        + cfg.individual_coverage_coeff * new_individual_cells
    )


def success_reward(ratio: float, cfg: RewardConfig) -> float:
    """The coverage ratio itself, paid at the first event where the ratio
    reaches the success threshold. Single-emission bookkeeping lives with the
    caller; this is the per-crossing value."""
    return ratio if ratio >= cfg.success_threshold / 100.0 else 0.0


def overlap_penalty(a_overlap: int, ratio: float, cfg: RewardConfig) -> float:
    """Penalty for growth of the pairwise-overlap area, waived once the team
    is close to done (ratio at or above the cutoff)."""
    if ratio >= cfg.overlap_cutoff:
        return 0.0
    return -cfg.overlap_coeff * a_overlap


def event_reward(new_team_cells: int, new_individual_cells: int,
                 new_overlap_cells: int, ratio: float, success_due: bool,
                 cfg: RewardConfig) -> float:
    """Full team reward for one atomic event, post-update ratio."""
    r = coverage_reward(new_team_cells, new_individual_cells, cfg)
    r += overlap_penalty(new_overlap_cells, ratio, cfg)
    if success_due:
        r += success_reward(ratio, cfg)
    return r


ATOMIC_KINDS = ("forward", "turn_left", "turn_right")


def recompute_rewards(events: list[dict], cfg: RewardConfig) -> list[float]:
    """Recompute the engine's per-event team reward stream from logged cell
    counts. Init records establish coverage without reward; only atomic
    action records pay out. Returns one value per event record, in order."""
    rewards = []
    success_paid = False
    for ev in events:
        if ev.get("kind") not in ATOMIC_KINDS:
            rewards.append(0.0)
            continue
        ratio = ev["ratio"]
        due = not success_paid and ratio >= cfg.success_threshold / 100.0
        if due:
            success_paid = True
        rewards.append(
            event_reward(
                ev["new_team"], ev["new_indiv"], ev["new_overlap"], ratio, due, cfg
            )
        )
    return rewards


# ---- evaluation metrics ----


def ratio_steps(events: list[dict]) -> list[tuple[float, float]]:
    """(time, ratio) change points of the coverage step function, deduplicated
    to the last ratio seen at each timestamp."""
    steps: list[tuple[float, float]] = []
    for ev in events:
        if "ratio" not in ev or "t" not in ev:
            continue
        t, r = float(ev["t"]), float(ev["ratio"])
        if steps and steps[-1][0] == t:
            steps[-1] = (t, r)
        else:
            steps.append((t, r))
    return steps


def time_to_coverage(events: list[dict], c_percent: float) -> float:
    """Earliest logged time with ratio at or above c_percent/100, else inf."""
    threshold = c_percent / 100.0
    for ev in events:
        if "ratio" in ev and ev["ratio"] >= threshold:
            return float(ev["t"])
    return math.inf


def acs(events: list[dict], horizon: float) -> float:
    """Integral of the coverage-ratio step function over [0, horizon]; the
    ratio holds its last value after the final event."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    steps = ratio_steps(events)
    total = 0.0
    current = 0.0
    prev_t = 0.0
    for t, r in steps:
        if t >= horizon:
            break
        if t > prev_t:
            total += current * (t - prev_t)
            prev_t = t
        current = r
    total += current * (horizon - prev_t)
    return total


def coverage_final(events: list[dict]) -> float:
    """Last logged coverage ratio (0.0 for an empty log)."""
    last = 0.0
    for ev in events:
        if "ratio" in ev:
            last = float(ev["ratio"])
    return last


def overlap_metric(state: ExplorationState, countable: np.ndarray) -> float:
    """Share of the explored area covered by two or more agents.

    state is the exploration snapshot at the moment of interest (the first
    success-threshold crossing for the headline metric); countable masks the
    cells that participate in area accounting.
    """
    counts = state.explored.sum(axis=0)
    explored = state.merged & countable
    denom = int(np.count_nonzero(explored))
    if denom == 0:
        return 0.0
    multi = int(np.count_nonzero((counts >= 2) & countable))
    return multi / denom


@dataclass(frozen=True)
class RunStats:
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.2f}({self.std:.2f})"


def aggregate_stats(values: list[float]) -> RunStats:
    """Sample mean and population standard deviation across episodes."""
    if not values:
        raise ValueError("no values to aggregate")
    arr = np.asarray(values, dtype=np.float64)
    return RunStats(mean=float(arr.mean()), std=float(arr.std(ddof=0)), n=len(arr))


RESULTS_CSV_COLUMNS = [
    "planner", "mode", "map_size", "n_agents",
    "time_mean", "time_std", "overlap_mean", "overlap_std",
    "coverage_mean", "coverage_std", "acs_mean", "acs_std", "episodes",
]
