"""Multi-agent grid exploration: maps, sensing, frontier planners, an
event-driven execution engine, and a learned goal policy with PPO training."""

from .engine import (
    DecisionContext,
    DecisionSource,
    DelayModel,
    EngineConfig,
    EpisodeLog,
    EpisodeResult,
    LossSchedule,
    TimingModel,
    run_episode,
)
from .geometry import Action, AgentPose, Cell, Heading
from .metrics import (
    RewardConfig,
    RunStats,
    acs,
    aggregate_stats,
    coverage_final,
    overlap_metric,
    recompute_rewards,
    time_to_coverage,
)
from .planners import (
    ApfParams,
    RrtParams,
    astar_path,
    bfs_distance_map,
    cluster_frontiers,
    information_gain,
    plan_apf,
    plan_nearest,
    plan_rrt,
    plan_utility,
    plan_voronoi,
    voronoi_partition,
)
from .policy import (
    PolicyConfig,
    PolicyParams,
    compression_ratio,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .sources import PlannerSource, PolicySource, RandomGoalSource
from .training import TrainConfig, TrainHyper, TrainResult, train
from .worldgen import GridMap, MapSpec, generate_map, spawn_agents

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentPose",
    "ApfParams",
    "Cell",
    "DecisionContext",
    "DecisionSource",
    "DelayModel",
    "EngineConfig",
    "EpisodeLog",
    "EpisodeResult",
    "GridMap",
    "Heading",
    "LossSchedule",
    "MapSpec",
    "PlannerSource",
    "PolicyConfig",
    "PolicyParams",
    "PolicySource",
    "RandomGoalSource",
    "RewardConfig",
    "RrtParams",
    "RunStats",
    "TimingModel",
    "TrainConfig",
    "TrainHyper",
    "TrainResult",
    "acs",
    "aggregate_stats",
    "astar_path",
    "bfs_distance_map",
    "cluster_frontiers",
    "compression_ratio",
    "coverage_final",
    "generate_map",
    "information_gain",
    "init_params",
    "load_checkpoint",
    "overlap_metric",
    "plan_apf",
    "plan_nearest",
    "plan_rrt",
    "plan_utility",
    "plan_voronoi",
    "recompute_rewards",
    "run_episode",
    "save_checkpoint",
    "spawn_agents",
    "time_to_coverage",
    "train",
    "voronoi_partition",
]
