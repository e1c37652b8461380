"""Discrete-event executor for asynchronous multi-agent exploration.

Time is integer ticks of 0.1s internally so that event ordering and barrier
arithmetic are exact; logs report seconds. Each agent runs a two-level loop:
a decision source proposes a goal cell, a time-cost shortest path supplies up
to max_local_steps atomic actions, and the engine interleaves all agents'
atomic events on one clock. Synchronous mode adds a barrier: nobody replans
until every living agent's macro has terminated.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .geometry import Action, AgentPose, Cell
from .metrics import RewardConfig, coverage_reward, overlap_penalty, success_reward
from .perception import R_FOV, ExplorationState, sense, update_trajectory
from .planners import KNOWN_WALL, NoPath, astar_path, known_map
from .worldgen import GridMap

TICKS_PER_SECOND = 10

MAX_LOCAL_STEPS = 5


class Deadlock(RuntimeError):
    """No agent can act and the coverage target is unmet."""


@dataclass(frozen=True)
class TimingModel:
    forward_s: float = 1.0
    turn_s: float = 0.5
    inference_s: float = 0.1
    delay_step_s: float = 1.0

    def __post_init__(self) -> None:
        for name in ("forward_s", "turn_s", "inference_s", "delay_step_s"):
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f"{name} must be positive")
            if round(value * TICKS_PER_SECOND) != value * TICKS_PER_SECOND:
                raise ValueError(f"{name} must be a multiple of 0.1s")


def atomic_duration(action: Action, timing: TimingModel) -> float:
    """Wall-clock cost of one atomic action in seconds."""
    return timing.forward_s if action == Action.FORWARD else timing.turn_s


@dataclass(frozen=True)
class DelayModel:
    min_steps: int = 3
    max_steps: int = 5
    enabled: bool = False

    def __post_init__(self) -> None:
        if not (1 <= self.min_steps <= self.max_steps):
            raise ValueError("delay steps must satisfy 1 <= min <= max")


def sample_delay(model: DelayModel, timing: TimingModel,
                 rng: np.random.Generator) -> float:
    """Uniform integer number of execution steps, as seconds; 0 when disabled."""
    if not model.enabled:
        return 0.0
    k = int(rng.integers(model.min_steps, model.max_steps + 1))
    return k * timing.delay_step_s


@dataclass(frozen=True)
class LossSchedule:
    initial_n: int
    surviving_n: int
    trigger_coverage: float = 0.5

    def __post_init__(self) -> None:
        if self.surviving_n > self.initial_n:
            raise ValueError("surviving_n must not exceed initial_n")


@dataclass
class MacroAction:
    goal: Cell
    planned_path: list[Action]
    executed_count: int = 0
    max_local_steps: int = MAX_LOCAL_STEPS
    issued_at: float = 0.0


def macro_terminated(macro: MacroAction, pose: AgentPose,
                     known: np.ndarray) -> bool:
    """True when the macro's stop condition holds: local step budget spent,
    goal reached, or the remaining path runs through a known wall."""
    if macro.executed_count >= macro.max_local_steps:
        return True
    if pose.cell == macro.goal:
        return True
    if macro.executed_count >= len(macro.planned_path):
        return True
    return not _path_clear(macro.planned_path[macro.executed_count:], pose, known)


def _path_clear(actions: list[Action], pose: AgentPose, known: np.ndarray) -> bool:
    h, w = known.shape
    cur = pose
    for act in actions:
        cur = cur.applied(act)
        if act == Action.FORWARD:
            if not (0 <= cur.x < w and 0 <= cur.y < h):
                return False
            if known[cur.y, cur.x] == KNOWN_WALL:
                return False
    return True


@dataclass
class AgentTimeline:
    agent_id: int
    pose: AgentPose
    alive: bool = True
    macro: MacroAction | None = None
    macro_index: int = 0
    # rewards accumulated since the agent's last decision, as
    # (own completed atomic steps in the window, team reward) pairs
    pending_rewards: list[tuple[int, float]] = field(default_factory=list)
    steps_in_window: int = 0
    emitted_total: float = 0.0
    next_tick: int = -1
    next_kind: str = ""
    serial: int = 0
    waiting_ready_tick: int = -1


@dataclass
class EngineConfig:
    mode: str = "async"  # "async" | "sync"
    timing: TimingModel = field(default_factory=TimingModel)
    delay: DelayModel = field(default_factory=DelayModel)
    loss: LossSchedule | None = None
    reward: RewardConfig = field(default_factory=RewardConfig)
    t_max: float = 100.0
    coverage_target: float = 1.0
    r_fov: int = R_FOV
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("async", "sync"):
            raise ValueError(f"mode must be 'async' or 'sync', got {self.mode!r}")


@dataclass
class DecisionContext:
    """Everything a decision source may consult when choosing a goal."""

    agent_id: int
    time: float
    decision_index: int
    grid: GridMap
    state: ExplorationState
    known: np.ndarray
    poses: list[AgentPose]
    alive: list[bool]
    rewards_since_last: list[tuple[int, float]]
    steps_since_last: int
    rng: np.random.Generator
    terminal: bool = False
    time_capped: bool = False


class DecisionSource(Protocol):
    """Maps decision contexts to goal cells; sees episode boundaries."""

    def begin_episode(self, grid: GridMap, n_agents: int,
                      rng: np.random.Generator) -> None: ...

    def choose_goal(self, ctx: DecisionContext) -> Cell: ...

    def agent_lost(self, ctx: DecisionContext) -> None: ...

    def end_episode(self, contexts: list[DecisionContext]) -> None: ...


@dataclass
class EpisodeLog:
    header: dict
    events: list[dict]

    def dumps(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True)]
        lines.extend(json.dumps(ev, sort_keys=True) for ev in self.events)
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"corrupt log line {lineno}: {exc}") from None
        if not records or records[0].get("kind") != "header":
            raise ValueError("log must start with a header record")
        return cls(header=records[0], events=records[1:])

    @classmethod
    def load(cls, path: str | Path) -> "EpisodeLog":
        return cls.loads(Path(path).read_text())


@dataclass
class EpisodeResult:
    log: EpisodeLog
    final_state: ExplorationState
    final_poses: list[AgentPose]
    alive: list[bool]
    terminal_time: float
    terminal_reason: str  # "coverage" | "time_cap" | "deadlock"
    coverage: float
    state_at_success: ExplorationState | None
    countable: np.ndarray


def reachable_free_mask(grid: GridMap, seeds: list[Cell]) -> np.ndarray:
    """Free cells reachable (4-connected) from any seed cell."""
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    free = grid.free_mask()
    stack = [c for c in seeds if free[c[1], c[0]] and not mask[c[1], c[0]]]
    for x, y in stack:
        mask[y, x] = True
    while stack:
        x, y = stack.pop()
        for nx, ny in ((x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)):
            if (
                0 <= nx < grid.width and 0 <= ny < grid.height
                and free[ny, nx] and not mask[ny, nx]
            ):
                mask[ny, nx] = True
                stack.append((nx, ny))
    return mask


class _Episode:
    """Mutable state for one run; all methods are driven by run_episode."""

    def __init__(self, grid: GridMap, spawns: list[AgentPose],
                 source: DecisionSource, config: EngineConfig):
        self.grid = grid
        self.config = config
        self.source = source
        self.timing = config.timing
        self.n_agents = len(spawns)
        if config.loss is not None and config.loss.initial_n != self.n_agents:
            raise ValueError(
                f"loss schedule expects {config.loss.initial_n} agents, "
                f"episode has {self.n_agents}"
            )
        self.agents = [AgentTimeline(i, p) for i, p in enumerate(spawns)]
        self.state = ExplorationState.empty(self.n_agents, grid)
        self.known = known_map(grid, self.state.merged)
        self.countable = reachable_free_mask(grid, [p.cell for p in spawns])
        self.total_countable = int(np.count_nonzero(self.countable))
        self.explored_countable = 0
        self.ratio = 0.0
        seq = np.random.SeedSequence(config.seed)
        delay_seed, source_seed = seq.spawn(2)
        # one delay stream per agent: the k-th delay of agent i is the same
        # number in sync and async runs of the same seed, which keeps paired
        # mode comparisons on identical delay draws
        self.delay_rngs = [
            np.random.default_rng(s) for s in delay_seed.spawn(self.n_agents)
        ]
        self.source_rng = np.random.default_rng(source_seed)
        self.heap: list[tuple[int, int, int]] = []
        self.events: list[dict] = []
        self.success_paid = False
        self.loss_applied = config.loss is None
        self.state_at_success: ExplorationState | None = None
        self.tick = 0
        self.done = False
        self.reason = ""
        self.team_reward_total = 0.0

    # ---- scheduling ----

    def schedule(self, agent: AgentTimeline, tick: int, kind: str) -> None:
        agent.serial += 1
        agent.next_tick = tick
        agent.next_kind = kind
        heapq.heappush(self.heap, (tick, agent.agent_id, agent.serial))

    def seconds(self, tick: int) -> float:
        return tick / TICKS_PER_SECOND

    def ticks(self, seconds: float) -> int:
        return round(seconds * TICKS_PER_SECOND)

    # ---- logging ----

    def log(self, **fields) -> None:
        self.events.append(fields)

    # ---- sensing and rewards ----

    def sense_and_reward(self, agent: AgentTimeline, kind: str) -> None:
        """Sense at the agent's pose, update shared accounting, and emit the
        team reward for this event to every living agent's open window."""
        result = sense(self.grid, self.state, agent.agent_id, agent.pose,
                       self.config.r_fov)
        new_agent_mask = result.new_to_agent
        new_merged_mask = result.new_to_merged
        new_team = int(np.count_nonzero(new_merged_mask & self.countable))
        # individual contribution is measured against the previous merged
        # map, so with serialized events it coincides with the team count
        new_indiv = new_team
        # peers' masks are untouched by this sense, so intersecting the
        # agent's newly gained cells with each peer mask gives the growth of
        # every pairwise overlap region
        new_overlap = 0
        for w in range(self.n_agents):
            if w == agent.agent_id:
                continue
            new_overlap += int(
                np.count_nonzero(new_agent_mask & self.state.explored[w] & self.countable)
            )
        self.known = known_map(self.grid, self.state.merged)
        update_trajectory(self.state, agent.agent_id, agent.pose)
        self.explored_countable += new_team
        self.ratio = (
            self.explored_countable / self.total_countable
            if self.total_countable else 1.0
        )
        reward = 0.0
        if kind != "init":
            cfg = self.config.reward
            success_due = (
                not self.success_paid
                and self.ratio >= cfg.success_threshold / 100.0
            )
            reward = coverage_reward(new_team, new_indiv, cfg)
            reward += overlap_penalty(new_overlap, self.ratio, cfg)
            if success_due:
                reward += success_reward(self.ratio, cfg)
                self.success_paid = True
            for other in self.agents:
                if other.alive:
                    other.pending_rewards.append((other.steps_in_window, reward))
                    other.emitted_total += reward
            self.team_reward_total += reward
        if (
            self.state_at_success is None
            and self.ratio >= self.config.reward.success_threshold / 100.0
        ):
            self.state_at_success = self.state.copy()
        ys, xs = np.nonzero(new_merged_mask)
        self.log(
            t=self.seconds(self.tick), agent=agent.agent_id, kind=kind,
            cell=[agent.pose.x, agent.pose.y], ratio=self.ratio, reward=reward,
            new_team=new_team, new_indiv=new_indiv, new_overlap=new_overlap,
            cells=[[int(x), int(y)] for y, x in zip(ys, xs)],
        )

    # ---- decision plumbing ----

    def build_context(self, agent: AgentTimeline, terminal: bool = False,
                      time_capped: bool = False) -> DecisionContext:
        return DecisionContext(
            agent_id=agent.agent_id,
            time=self.seconds(self.tick),
            decision_index=agent.macro_index,
            grid=self.grid,
            state=self.state,
            known=self.known,
            poses=[a.pose for a in self.agents],
            alive=[a.alive for a in self.agents],
            rewards_since_last=list(agent.pending_rewards),
            steps_since_last=agent.steps_in_window,
            rng=self.source_rng,
            terminal=terminal,
            time_capped=time_capped,
        )

    def decide(self, agent: AgentTimeline) -> None:
        ctx = self.build_context(agent)
        goal = self.source.choose_goal(ctx)
        agent.pending_rewards.clear()
        agent.steps_in_window = 0
        agent.macro_index += 1
        if not self.grid.in_bounds(goal):
            raise ValueError(
                f"agent {agent.agent_id} chose out-of-bounds goal {goal} "
                f"at t={self.seconds(self.tick)}"
            )
        try:
            path = astar_path(
                self.known, agent.pose, goal,
                forward_cost=self.timing.forward_s, turn_cost=self.timing.turn_s,
            )
        except NoPath:
            path = []
        agent.macro = MacroAction(
            goal=goal, planned_path=path[:MAX_LOCAL_STEPS],
            issued_at=self.seconds(self.tick),
        )
        self.log(
            t=self.seconds(self.tick), agent=agent.agent_id, kind="decide",
            cell=[goal[0], goal[1]], ratio=self.ratio, reward=0.0,
        )
        self.after_macro_progress(agent)

    def after_macro_progress(self, agent: AgentTimeline) -> None:
        """Schedule the agent's next event given its macro state."""
        macro = agent.macro
        assert macro is not None
        if macro_terminated(macro, agent.pose, self.known):
            self.on_macro_done(agent)
        else:
            action = macro.planned_path[macro.executed_count]
            dur = self.ticks(atomic_duration(action, self.timing))
            self.schedule(agent, self.tick + dur, "step")

    def on_macro_done(self, agent: AgentTimeline) -> None:
        delay = self.ticks(sample_delay(self.config.delay, self.timing,
                                        self.delay_rngs[agent.agent_id]))
        inference = self.ticks(self.timing.inference_s)
        if self.config.mode == "async":
            self.schedule(agent, self.tick + delay + inference, "decide")
        else:
            agent.waiting_ready_tick = self.tick + delay
            agent.next_kind = "waiting"
            self.try_release_barrier()

    def try_release_barrier(self) -> None:
        living = [a for a in self.agents if a.alive]
        if not living or any(a.next_kind != "waiting" for a in living):
            return
        release = max(a.waiting_ready_tick for a in living)
        inference = self.ticks(self.timing.inference_s)
        for a in living:
            a.waiting_ready_tick = -1
            self.schedule(a, release + inference, "decide")

    # ---- event execution ----

    def execute_step(self, agent: AgentTimeline) -> None:
        macro = agent.macro
        assert macro is not None and macro.executed_count < len(macro.planned_path)
        action = macro.planned_path[macro.executed_count]
        next_pose = agent.pose.applied(action)
        if action == Action.FORWARD:
            assert self.grid.is_free(next_pose.cell), "planned step into a wall"
        agent.pose = next_pose
        macro.executed_count += 1
        kind = {
            Action.FORWARD: "forward",
            Action.TURN_LEFT: "turn_left",
            Action.TURN_RIGHT: "turn_right",
        }[action]
        self.sense_and_reward(agent, kind)
        agent.steps_in_window += 1
        self.check_agent_loss()
        if self.check_termination():
            return
        if agent.alive:
            self.after_macro_progress(agent)

    def check_agent_loss(self) -> None:
        if self.loss_applied or self.ratio < self.config.loss.trigger_coverage:
            return
        self.loss_applied = True
        victims = range(self.config.loss.initial_n - 1,
                        self.config.loss.surviving_n - 1, -1)
        for vid in victims:
            victim = self.agents[vid]
            if not victim.alive:
                continue
            victim.alive = False
            ctx = self.build_context(victim, terminal=True)
            self.source.agent_lost(ctx)
            victim.pending_rewards.clear()
            self.log(
                t=self.seconds(self.tick), agent=vid, kind="death",
                cell=[victim.pose.x, victim.pose.y], ratio=self.ratio, reward=0.0,
            )
        if self.config.mode == "sync":
            self.try_release_barrier()

    def check_termination(self) -> bool:
        if self.ratio >= self.config.coverage_target - 1e-12:
            self.finish("coverage")
            return True
        return False

    def finish(self, reason: str) -> None:
        self.done = True
        self.reason = reason
        self.log(
            t=self.seconds(self.tick), agent=-1, kind="end", cell=[-1, -1],
            ratio=self.ratio, reward=0.0, reason=reason,
            team_reward_total=self.team_reward_total,
            emitted_totals=[a.emitted_total for a in self.agents],
        )


def run_episode(grid: GridMap, spawns: list[AgentPose], source: DecisionSource,
                config: EngineConfig,
                extra_header: Optional[dict] = None) -> EpisodeResult:
    """Run one episode to the coverage target, the time cap, or deadlock.

    extra_header entries (experiment provenance, for example) are merged into
    the log header; they must be JSON-serializable.
    """
    ep = _Episode(grid, spawns, source, config)
    source.begin_episode(grid, ep.n_agents, ep.source_rng)
    for agent in ep.agents:
        ep.sense_and_reward(agent, "init")
    ep.check_agent_loss()
    t_max_tick = ep.ticks(config.t_max)
    if not ep.check_termination():
        inference = ep.ticks(config.timing.inference_s)
        for agent in ep.agents:
            if agent.alive:
                ep.schedule(agent, inference, "decide")
        while ep.heap and not ep.done:
            tick, agent_id, serial = heapq.heappop(ep.heap)
            agent = ep.agents[agent_id]
            if serial != agent.serial or not agent.alive:
                continue
            if tick > t_max_tick:
                ep.tick = t_max_tick
                ep.finish("time_cap")
                break
            ep.tick = tick
            if agent.next_kind == "decide":
                ep.decide(agent)
            else:
                ep.execute_step(agent)
        if not ep.done:
            ep.finish("deadlock")
    header = {
        "kind": "header",
        "map": grid.to_ascii(),
        "spawns": [[p.x, p.y, int(p.heading)] for p in spawns],
        "n_agents": ep.n_agents,
        "mode": config.mode,
        "seed": config.seed,
        "t_max": config.t_max,
        "coverage_target": config.coverage_target,
        "r_fov": config.r_fov,
        "timing": {
            "forward_s": config.timing.forward_s,
            "turn_s": config.timing.turn_s,
            "inference_s": config.timing.inference_s,
            "delay_step_s": config.timing.delay_step_s,
        },
        "delay": {
            "min_steps": config.delay.min_steps,
            "max_steps": config.delay.max_steps,
            "enabled": config.delay.enabled,
        },
        "loss": (
            {
                "initial_n": config.loss.initial_n,
                "surviving_n": config.loss.surviving_n,
                "trigger_coverage": config.loss.trigger_coverage,
            }
            if config.loss else None
        ),
        "reward": {
            "team_coverage_coeff": config.reward.team_coverage_coeff,
            "individual_coverage_coeff": config.reward.individual_coverage_coeff,
            "overlap_coeff": config.reward.overlap_coeff,
            "success_threshold": config.reward.success_threshold,
            "overlap_cutoff": config.reward.overlap_cutoff,
        },
        "countable_cells": ep.total_countable,
    }
    if extra_header:
        header.update(extra_header)
    log = EpisodeLog(header=header, events=ep.events)
    final_contexts = [
        ep.build_context(a, terminal=(ep.reason == "coverage"),
                         time_capped=(ep.reason != "coverage"))
        for a in ep.agents
    ]
    source.end_episode(final_contexts)
    return EpisodeResult(
        log=log,
        final_state=ep.state,
        final_poses=[a.pose for a in ep.agents],
        alive=[a.alive for a in ep.agents],
        terminal_time=ep.seconds(ep.tick) if ep.done else 0.0,
        terminal_reason=ep.reason,
        coverage=ep.ratio,
        state_at_success=ep.state_at_success,
        countable=ep.countable,
    )


def apply_agent_loss(schedule: LossSchedule, alive: list[bool]) -> list[bool]:
    """Pure form of the loss rule: mark highest-id agents dead until
    surviving_n remain. The engine applies the same rule in-episode."""
    out = list(alive)
    for vid in range(schedule.initial_n - 1, schedule.surviving_n - 1, -1):
        out[vid] = False
    return out
