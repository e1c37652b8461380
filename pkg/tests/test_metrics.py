"""Reward formulas, evaluation metrics, and episode aggregation."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gridexplore.metrics import (
    RewardConfig,
    RunStats,
    acs,
    aggregate_stats,
    coverage_final,
    coverage_reward,
    event_reward,
    overlap_metric,
    overlap_penalty,
    ratio_steps,
    recompute_rewards,
    success_reward,
    time_to_coverage,
)
from gridexplore.perception import ExplorationState
from gridexplore.worldgen import GridMap

CFG = RewardConfig()


# ---- independent oracles ----


def riemann_acs(events, horizon: float, dt: float = 1e-3) -> float:
    """Left-endpoint Riemann sum of the coverage step function.

    Change times must lie on the dt grid for the sum to be exact.
    """
    points = [(float(ev["t"]), float(ev["ratio"])) for ev in events if "ratio" in ev]
    n = round(horizon / dt)
    total = 0.0
    for i in range(n):
        t = i / 1000.0
        value = 0.0
        for pt, pr in points:
            if pt <= t:
                value = pr
            else:
                break
        total += value * dt
    return total


def two_pass_stats(values) -> tuple:
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def overlap_oracle(state: ExplorationState, countable: np.ndarray) -> float:
    h, w = countable.shape
    multi = 0
    denom = 0
    for y in range(h):
        for x in range(w):
            if not countable[y, x]:
                continue
            count = sum(int(state.explored[a, y, x]) for a in range(state.n_agents))
            if count >= 1:
                denom += 1
            if count >= 2:
                multi += 1
    return multi / denom if denom else 0.0


def make_events(points):
    return [{"t": t, "kind": "forward", "ratio": r} for t, r in points]


def random_ratio_stream(rng: np.random.Generator):
    """Nondecreasing coverage steps at tick-aligned times."""
    n = int(rng.integers(1, 12))
    ticks = np.sort(rng.choice(np.arange(1, 120), size=n, replace=False))
    ratios = np.sort(rng.random(n))
    return [(int(k) / 10.0, float(r)) for k, r in zip(ticks, ratios)]


# ---- reward units ----


def test_coverage_reward_zero_cells():
    assert coverage_reward(0, 0, CFG) == 0.0


def test_coverage_reward_linear_form():
    assert coverage_reward(10, 6, CFG) == pytest.approx(0.26)


def test_coverage_reward_respects_coefficients():
    cfg = RewardConfig(team_coverage_coeff=0.5, individual_coverage_coeff=0.25)
    assert coverage_reward(4, 2, cfg) == pytest.approx(2.5)


def test_success_reward_pays_the_ratio():
    assert success_reward(0.981, CFG) == pytest.approx(0.981)


def test_success_reward_below_threshold_is_zero():
    assert success_reward(0.97, CFG) == 0.0


def test_overlap_penalty_formula():
    assert overlap_penalty(10, 0.5, CFG) == pytest.approx(-0.10)


def test_overlap_penalty_waived_near_completion():
    assert overlap_penalty(10, 0.95, CFG) == 0.0
    assert overlap_penalty(10, 0.9, CFG) == 0.0


def test_overlap_penalty_zero_increment():
    assert overlap_penalty(0, 0.2, CFG) == 0.0


def test_event_reward_composition():
    got = event_reward(10, 6, 4, 0.5, False, CFG)
    assert got == pytest.approx(0.26 - 0.04)
    got = event_reward(2, 2, 0, 0.99, True, CFG)
    assert got == pytest.approx(0.06 + 0.99)


def test_recompute_rewards_synthetic_stream():
    events = [
        {"kind": "init", "t": 0.0, "ratio": 0.1},
        {"kind": "forward", "t": 1.0, "ratio": 0.5,
         "new_team": 10, "new_indiv": 6, "new_overlap": 0},
        {"kind": "forward", "t": 2.0, "ratio": 0.5,
         "new_team": 0, "new_indiv": 0, "new_overlap": 10},
        {"kind": "turn_left", "t": 2.5, "ratio": 0.95,
         "new_team": 5, "new_indiv": 5, "new_overlap": 7},
        {"kind": "decide", "t": 2.5, "cell": [3, 3]},
        {"kind": "forward", "t": 3.5, "ratio": 0.99,
         "new_team": 2, "new_indiv": 2, "new_overlap": 0},
        {"kind": "forward", "t": 4.5, "ratio": 1.0,
         "new_team": 1, "new_indiv": 1, "new_overlap": 0},
        {"kind": "end", "t": 4.5},
    ]
    got = recompute_rewards(events, CFG)
    expected = [0.0, 0.26, -0.10, 0.15, 0.0, 0.06 + 0.99, 0.03, 0.0]
    assert got == pytest.approx(expected)


def test_recompute_rewards_success_paid_once():
    events = make_events([(1.0, 0.99), (2.0, 0.995), (3.0, 1.0)])
    for ev in events:
        ev.update(new_team=0, new_indiv=0, new_overlap=0)
    got = recompute_rewards(events, CFG)
    assert got == pytest.approx([0.99, 0.0, 0.0])


# ---- coverage step function ----


def test_ratio_steps_deduplicates_same_timestamp():
    events = make_events([(1.0, 0.2), (1.0, 0.25), (2.0, 0.5)])
    assert ratio_steps(events) == [(1.0, 0.25), (2.0, 0.5)]


def test_ratio_steps_skips_records_without_ratio():
    events = [
        {"kind": "decide", "t": 1.0, "cell": [2, 2]},
        {"kind": "forward", "t": 1.5, "ratio": 0.3},
    ]
    assert ratio_steps(events) == [(1.5, 0.3)]


def test_time_to_coverage_first_crossing():
    events = make_events([(5.0, 0.4), (12.5, 0.99), (14.0, 1.0)])
    assert time_to_coverage(events, 98.0) == 12.5


def test_time_to_coverage_never_reached_is_inf():
    events = make_events([(5.0, 0.4), (20.0, 0.8)])
    assert math.isinf(time_to_coverage(events, 98.0))


def test_time_to_coverage_monotone_in_threshold():
    rng = np.random.default_rng(8001)
    for _ in range(30):
        events = make_events(random_ratio_stream(rng))
        assert time_to_coverage(events, 98.0) >= time_to_coverage(events, 90.0)


# ---- acs ----


def test_acs_constant_full_coverage():
    events = make_events([(0.0, 1.0)])
    assert acs(events, 10.0) == pytest.approx(10.0)


def test_acs_piecewise_example():
    events = make_events([(2.0, 0.5), (4.0, 1.0)])
    assert acs(events, 10.0) == pytest.approx(7.0)


def test_acs_holds_last_ratio_after_final_event():
    events = make_events([(1.0, 0.5)])
    assert acs(events, 21.0) == pytest.approx(0.5 * 20.0)


def test_acs_ignores_events_past_horizon():
    events = make_events([(1.0, 0.5), (30.0, 1.0)])
    assert acs(events, 10.0) == pytest.approx(0.5 * 9.0)


def test_acs_requires_positive_horizon():
    with pytest.raises(ValueError):
        acs([], 0.0)


def test_acs_matches_riemann_sum():
    rng = np.random.default_rng(8002)
    for _ in range(15):
        events = make_events(random_ratio_stream(rng))
        horizon = int(rng.integers(10, 150)) / 10.0
        assert acs(events, horizon) == pytest.approx(riemann_acs(events, horizon), abs=1e-6)


def test_acs_monotone_and_bounded_by_horizon():
    rng = np.random.default_rng(8003)
    for _ in range(15):
        events = make_events(random_ratio_stream(rng))
        horizons = sorted(float(h) for h in rng.uniform(0.5, 20.0, size=3))
        values = [acs(events, h) for h in horizons]
        assert values == sorted(values)
        for h, v in zip(horizons, values):
            assert v <= h + 1e-12


# ---- coverage and overlap ----


def test_coverage_final_tracks_last_ratio():
    events = make_events([(1.0, 0.3), (2.0, 0.8)])
    assert coverage_final(events) == 0.8
    assert coverage_final([]) == 0.0


def open_grid(width: int, height: int) -> GridMap:
    rows = ["#" * width]
    rows += ["#" + "." * (width - 2) + "#" for _ in range(height - 2)]
    rows.append("#" * width)
    return GridMap.from_ascii("\n".join(rows))


def test_overlap_metric_single_agent_is_zero():
    grid = open_grid(9, 9)
    state = ExplorationState.empty(1, grid)
    state.explored[0, 1:5, 1:5] = True
    state.merged[:] = state.explored.any(axis=0)
    assert overlap_metric(state, grid.free_mask()) == 0.0


def test_overlap_metric_identical_sets_is_one():
    grid = open_grid(9, 9)
    state = ExplorationState.empty(2, grid)
    state.explored[:, 1:5, 1:5] = True
    state.merged[:] = state.explored.any(axis=0)
    assert overlap_metric(state, grid.free_mask()) == 1.0


def test_overlap_metric_matches_cell_counting_oracle():
    rng = np.random.default_rng(8004)
    grid = open_grid(11, 11)
    countable = grid.free_mask()
    for _ in range(20):
        n_agents = int(rng.integers(1, 4))
        state = ExplorationState.empty(n_agents, grid)
        for a in range(n_agents):
            state.explored[a] = (rng.random((11, 11)) < 0.4) & countable
        state.merged[:] = state.explored.any(axis=0)
        assert overlap_metric(state, countable) == pytest.approx(
            overlap_oracle(state, countable)
        )


def test_overlap_metric_empty_state_is_zero():
    grid = open_grid(9, 9)
    state = ExplorationState.empty(2, grid)
    assert overlap_metric(state, grid.free_mask()) == 0.0


# ---- aggregation ----


def test_aggregate_stats_constant_values():
    stats = aggregate_stats([5.0, 5.0, 5.0])
    assert (stats.mean, stats.std, stats.n) == (5.0, 0.0, 3)
    assert str(stats) == "5.00(0.00)"


def test_aggregate_stats_two_point_spread():
    stats = aggregate_stats([0.0, 10.0])
    assert str(stats) == "5.00(5.00)"


def test_aggregate_stats_matches_two_pass_oracle():
    rng = np.random.default_rng(8005)
    for _ in range(20):
        values = list(rng.normal(50.0, 12.0, size=int(rng.integers(1, 40))))
        stats = aggregate_stats(values)
        mean, std = two_pass_stats(values)
        assert stats.mean == pytest.approx(mean, abs=1e-9)
        assert stats.std == pytest.approx(std, abs=1e-9)


def test_aggregate_stats_rejects_empty():
    with pytest.raises(ValueError):
        aggregate_stats([])


def test_run_stats_formatting():
    assert str(RunStats(mean=92.5432, std=1.239, n=10)) == "92.54(1.24)"
