"""Decision sources: adapters from goal-selection strategies to the engine.

A source receives a DecisionContext at every replan and returns a goal cell.
Planner-backed sources replan on the merged exploration state; when no
frontier remains (race with the termination check) they fall back to the
agent's own cell, which yields an empty macro and an immediate re-decision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import DecisionContext
from .geometry import Cell
from .perception import build_local_info, build_merged_info
from .planners import (
    ApfParams,
    NoFrontier,
    RrtParams,
    plan_apf,
    plan_nearest,
    plan_rrt,
    plan_utility,
    plan_voronoi,
)
from .policy import (
    PolicyConfig,
    PolicyParams,
    actor_forward,
    argmax_goal,
    comm_bytes_per_peer,
    goal_cell_for_index,
    pool_observation,
    sample_goal,
)
from .worldgen import GridMap

PLANNER_NAMES = ("utility", "nearest", "rrt", "apf", "voronoi")


class BaseSource:
    """No-op episode hooks; subclasses override choose_goal."""

    def begin_episode(self, grid: GridMap, n_agents: int,
                      rng: np.random.Generator) -> None:
        pass

    def choose_goal(self, ctx: DecisionContext) -> Cell:
        raise NotImplementedError

    def agent_lost(self, ctx: DecisionContext) -> None:
        pass

    def end_episode(self, contexts: list[DecisionContext]) -> None:
        pass


@dataclass
class PlannerSource(BaseSource):
    """Dispatches to one of the five baseline planners by name."""

    planner: str
    rrt_params: RrtParams = field(default_factory=RrtParams)
    apf_params: ApfParams = field(default_factory=ApfParams)
    ig_radius: int = 2

    def __post_init__(self) -> None:
        if self.planner not in PLANNER_NAMES:
            raise ValueError(
                f"unknown planner {self.planner!r}; expected one of {PLANNER_NAMES}"
            )

    def choose_goal(self, ctx: DecisionContext) -> Cell:
        pose = ctx.poses[ctx.agent_id]
        try:
            if self.planner == "utility":
                return plan_utility(ctx.state, ctx.known, ctx.grid, pose,
                                    self.ig_radius)
            if self.planner == "nearest":
                return plan_nearest(ctx.state, ctx.known, ctx.grid, pose)
            if self.planner == "rrt":
                return plan_rrt(ctx.state, ctx.known, ctx.grid, pose,
                                self.rrt_params, ctx.rng)
            if self.planner == "apf":
                return plan_apf(ctx.state, ctx.known, ctx.grid, ctx.poses,
                                ctx.alive, ctx.agent_id, self.apf_params)
            return plan_voronoi(ctx.state, ctx.known, ctx.grid, ctx.poses,
                                ctx.alive, ctx.agent_id, self.ig_radius)
        except NoFrontier:
            return pose.cell


@dataclass
class RandomGoalSource(BaseSource):
    """Uniform random goal over the G x G block centers of the map; the
    comparison baseline for trained goal policies."""

    goal_grid: int = 5

    def choose_goal(self, ctx: DecisionContext) -> Cell:
        g = self.goal_grid
        idx = int(ctx.rng.integers(g * g))
        return goal_cell_for_index(idx, g, (ctx.grid.width, ctx.grid.height))


@dataclass
class PolicySource(BaseSource):
    """Goal selection by a trained policy checkpoint.

    Peer embeddings are recomputed from each living peer's current
    observation at the deciding agent's timestamp; comm accounting fields
    are exposed for logging and tests.
    """

    params: "PolicyParams"
    cfg: "PolicyConfig"
    deterministic: bool = True
    last_comm_bytes: int = 0

    def choose_goal(self, ctx: DecisionContext) -> Cell:
        own, peers = gather_policy_inputs(ctx, self.cfg)
        fwd = actor_forward(own, peers, self.params, self.cfg)
        self.last_comm_bytes = comm_bytes_per_peer(self.cfg) * len(peers)
        dims = (ctx.grid.width, ctx.grid.height)
        if self.deterministic:
            return argmax_goal(fwd.dist, dims)
        return sample_goal(fwd.dist, ctx.rng, dims)


def gather_policy_inputs(ctx: DecisionContext, cfg: PolicyConfig,
                         ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Pooled observation for the deciding agent plus pooled peer inputs
    according to the communication mode. The observation canvas follows the
    map, so one checkpoint serves any map size."""
    canvas = max(ctx.grid.width, ctx.grid.height)
    if cfg.comm_mode == "perfect":
        own_info = build_merged_info(
            ctx.grid, ctx.state, ctx.agent_id, ctx.poses, ctx.alive, canvas
        )
    else:
        own_info = build_local_info(
            ctx.grid, ctx.state, ctx.agent_id, ctx.poses[ctx.agent_id], canvas
        )
    own = pool_observation(own_info, cfg)
    peers: list[np.ndarray] = []
    if cfg.comm_mode != "none":
        for w, live in enumerate(ctx.alive):
            if w == ctx.agent_id or not live:
                continue
            if cfg.comm_mode == "perfect":
                info = build_merged_info(
                    ctx.grid, ctx.state, w, ctx.poses, ctx.alive, canvas
                )
            else:
                info = build_local_info(
                    ctx.grid, ctx.state, w, ctx.poses[w], canvas
                )
            peers.append(pool_observation(info, cfg))
    return own, peers


def gather_critic_inputs(ctx: DecisionContext, agent_id: int, cfg: PolicyConfig,
                         ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Centralized-critic inputs: merged-team observations regardless of the
    communication mode."""
    canvas = max(ctx.grid.width, ctx.grid.height)
    own = pool_observation(
        build_merged_info(ctx.grid, ctx.state, agent_id, ctx.poses, ctx.alive,
                          canvas),
        cfg,
    )
    peers = [
        pool_observation(
            build_merged_info(ctx.grid, ctx.state, w, ctx.poses, ctx.alive,
                              canvas),
            cfg,
        )
        for w, live in enumerate(ctx.alive)
        if w != agent_id and live
    ]
    return own, peers
