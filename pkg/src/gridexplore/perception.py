"""Agent sensing and observation construction.

Each agent maintains its own explored mask and a decaying trajectory field;
the team additionally keeps a merged explored mask. Observations are stacked
single-channel images over a fixed S x S canvas (maps smaller than S are
zero-padded at the bottom/right).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import AgentPose, Cell, chebyshev
from .worldgen import FREE, WALL, GridMap

R_FOV = 2
TRAJECTORY_DECAY = 0.9
TRAJECTORY_NEAR_SQ = 9  # Euclidean distance < 3 marks a cell as "near"

N_CHANNELS = 7
CH_OBSTACLE = 0
CH_EXPLORED = 1
CH_LOCATION = 2
CH_TRAJECTORY = 3
CH_VISIBLE = 4
CH_VISIBLE_OBSTACLE = 5
CH_VISIBLE_FREE = 6

_MAGIC_HEADER = struct.Struct("<II")  # (S, channel count), little-endian


def bresenham_line(a: Cell, b: Cell) -> list[Cell]:
    """Grid cells on the segment from a to b inclusive (symmetric variant
    that steps diagonally on ties)."""
    x0, y0 = a
    x1, y1 = b
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = []
    while True:
        cells.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return cells
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


@lru_cache(maxsize=8)
def _los_offsets(r_fov: int) -> list[tuple[Cell, tuple[Cell, ...]]]:
    """(offset, intermediate offsets) pairs for every cell within Chebyshev
    r_fov of the origin, origin included with no intermediates."""
    table = []
    for dy in range(-r_fov, r_fov + 1):
        for dx in range(-r_fov, r_fov + 1):
            line = bresenham_line((0, 0), (dx, dy))
            table.append(((dx, dy), tuple(line[1:-1])))
    return table


def visible_cells(grid: GridMap, origin: Cell, r_fov: int = R_FOV) -> np.ndarray:
    """Boolean (height, width) mask of cells visible from origin.

    A cell is visible when it lies within Chebyshev r_fov and every strictly
    intermediate cell on the rasterised segment to it is free. Walls are
    visible as segment endpoints but block cells behind them.
    """
    ox, oy = origin
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for (dx, dy), between in _los_offsets(r_fov):
        x, y = ox + dx, oy + dy
        if not (0 <= x < grid.width and 0 <= y < grid.height):
            continue
        if all(grid.cells[oy + by, ox + bx] == FREE for bx, by in between):
            mask[y, x] = True
    return mask


@dataclass
class ExplorationState:
    """Per-agent and merged exploration knowledge for one episode."""

    explored: np.ndarray  # bool (n_agents, height, width)
    merged: np.ndarray  # bool (height, width)
    trajectories: np.ndarray  # float64 (n_agents, height, width), values in [0, 1]

    @classmethod
    def empty(cls, n_agents: int, grid: GridMap) -> "ExplorationState":
        shape = (n_agents, grid.height, grid.width)
        return cls(
            explored=np.zeros(shape, dtype=bool),
            merged=np.zeros(shape[1:], dtype=bool),
            trajectories=np.zeros(shape, dtype=np.float64),
        )

    @property
    def n_agents(self) -> int:
        return int(self.explored.shape[0])

    def copy(self) -> "ExplorationState":
        return ExplorationState(
            self.explored.copy(), self.merged.copy(), self.trajectories.copy()
        )


@dataclass(frozen=True)
class SenseResult:
    new_to_agent: np.ndarray  # bool mask; cells this observation added to the agent's map
    new_to_merged: np.ndarray  # bool mask; cells new to the merged map


def sense(
    grid: GridMap, state: ExplorationState, agent_id: int, pose: AgentPose,
    r_fov: int = R_FOV,
) -> SenseResult:
    """Mark every cell visible from pose as explored by agent_id, updating
    both the agent's own mask and the merged mask in place."""
    vis = visible_cells(grid, pose.cell, r_fov)
    new_agent = vis & ~state.explored[agent_id]
    new_merged = vis & ~state.merged
    state.explored[agent_id] |= vis
    state.merged |= vis
    return SenseResult(new_to_agent=new_agent, new_to_merged=new_merged)


def overlap_increment(
    state: ExplorationState, agent_id: int, new_to_agent: np.ndarray,
    countable: np.ndarray | None = None,
) -> int:
    """Total growth of the pairwise-overlap regions caused by agent_id newly
    exploring the cells in new_to_agent, summed over all other agents."""
    if countable is not None:
        new_to_agent = new_to_agent & countable
    total = 0
    for w in range(state.n_agents):
        if w == agent_id:
            continue
        total += int(np.count_nonzero(new_to_agent & state.explored[w]))
    return total


def update_trajectory(
    state: ExplorationState, agent_id: int, pose: AgentPose,
    decay: float = TRAJECTORY_DECAY,
) -> None:
    """Decay the agent's trajectory field, then stamp cells near the agent
    (Euclidean distance < 3) to 1. A cell last visited k steps ago holds
    decay**k."""
    traj = state.trajectories[agent_id]
    traj *= decay
    h, w = traj.shape
    ys, xs = np.mgrid[0:h, 0:w]
    near = (xs - pose.x) ** 2 + (ys - pose.y) ** 2 < TRAJECTORY_NEAR_SQ
    traj[near] = 1.0


def known_walls(grid: GridMap, explored: np.ndarray) -> np.ndarray:
    """Walls discovered so far: explored cells that are walls in truth."""
    return explored & (grid.cells == WALL)


def build_local_info(
    grid: GridMap, state: ExplorationState, agent_id: int, pose: AgentPose,
    size: int, r_fov: int = R_FOV,
) -> np.ndarray:
    """Stack the agent's local observation channels on an S x S canvas.

    Channels (in order): known obstacles, explored mask, own location
    one-hot, own trajectory, currently visible cells, visible obstacles,
    visible free cells. Returns float64 (7, S, S).
    """
    if size < max(grid.height, grid.width):
        raise ValueError(
            f"canvas {size} smaller than map {grid.width}x{grid.height}"
        )
    vis = visible_cells(grid, pose.cell, r_fov)
    out = np.zeros((N_CHANNELS, size, size), dtype=np.float64)
    h, w = grid.height, grid.width
    out[CH_OBSTACLE, :h, :w] = known_walls(grid, state.explored[agent_id])
    out[CH_EXPLORED, :h, :w] = state.explored[agent_id]
    out[CH_LOCATION, pose.y, pose.x] = 1.0
    out[CH_TRAJECTORY, :h, :w] = state.trajectories[agent_id]
    out[CH_VISIBLE, :h, :w] = vis
    out[CH_VISIBLE_OBSTACLE, :h, :w] = vis & (grid.cells == WALL)
    out[CH_VISIBLE_FREE, :h, :w] = vis & (grid.cells == FREE)
    return out


def build_merged_info(
    grid: GridMap, state: ExplorationState, agent_id: int,
    poses: list[AgentPose], alive: list[bool], size: int, r_fov: int = R_FOV,
) -> np.ndarray:
    """Team-level variant of build_local_info: merged obstacle and explored
    masks, multi-hot locations of all living agents, own trajectory and own
    visibility channels."""
    if size < max(grid.height, grid.width):
        raise ValueError(
            f"canvas {size} smaller than map {grid.width}x{grid.height}"
        )
    pose = poses[agent_id]
    vis = visible_cells(grid, pose.cell, r_fov)
    out = np.zeros((N_CHANNELS, size, size), dtype=np.float64)
    h, w = grid.height, grid.width
    out[CH_OBSTACLE, :h, :w] = known_walls(grid, state.merged)
    out[CH_EXPLORED, :h, :w] = state.merged
    for i, (p, live) in enumerate(zip(poses, alive)):
        if live:
            out[CH_LOCATION, p.y, p.x] = 1.0
    out[CH_TRAJECTORY, :h, :w] = state.trajectories[agent_id]
    out[CH_VISIBLE, :h, :w] = vis
    out[CH_VISIBLE_OBSTACLE, :h, :w] = vis & (grid.cells == WALL)
    out[CH_VISIBLE_FREE, :h, :w] = vis & (grid.cells == FREE)
    return out


def frontier_cells(grid: GridMap, merged: np.ndarray) -> list[Cell]:
    """Explored free cells adjacent (4-neighbourhood) to at least one
    unexplored free cell, in row-major order."""
    free = grid.free_mask()
    unexplored_free = free & ~merged
    adj = np.zeros_like(unexplored_free)
    adj[:-1, :] |= unexplored_free[1:, :]
    adj[1:, :] |= unexplored_free[:-1, :]
    adj[:, :-1] |= unexplored_free[:, 1:]
    adj[:, 1:] |= unexplored_free[:, :-1]
    frontier = free & merged & adj
    ys, xs = np.nonzero(frontier)
    return [(int(x), int(y)) for y, x in zip(ys, xs)]


def serialize_local_info(info: np.ndarray) -> bytes:
    """Pack an observation stack as a (size, channels) header followed by
    float32 little-endian payload, channels outermost, rows in order."""
    if info.ndim != 3 or info.shape[1] != info.shape[2]:
        raise ValueError(f"expected (channels, S, S), got {info.shape}")
    channels, size, _ = info.shape
    return _MAGIC_HEADER.pack(size, channels) + np.ascontiguousarray(
        info, dtype="<f4"
    ).tobytes()


def parse_local_info(data: bytes) -> np.ndarray:
    """Inverse of serialize_local_info; returns float32 (channels, S, S)."""
    if len(data) < _MAGIC_HEADER.size:
        raise ValueError("truncated observation payload")
    size, channels = _MAGIC_HEADER.unpack_from(data)
    expected = _MAGIC_HEADER.size + 4 * channels * size * size
    if len(data) != expected:
        raise ValueError(f"payload length {len(data)}, expected {expected}")
    flat = np.frombuffer(data, dtype="<f4", offset=_MAGIC_HEADER.size)
    return flat.reshape(channels, size, size).copy()
