"""Goal planners and shared navigation primitives.

All planners work on a KnownMap snapshot (free / wall / unknown as currently
explored) plus the merged exploration state, and return a single goal cell.
Cells in ties are resolved toward the smallest (row, col).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Action, AgentPose, Cell, Heading, rowmajor_key
from .perception import ExplorationState, bresenham_line, frontier_cells
from .worldgen import WALL, GridMap

UNKNOWN = 0
KNOWN_FREE = 1
KNOWN_WALL = 2

DEFAULT_IG_RADIUS = 2


class NoFrontier(RuntimeError):
    """No frontier cell is available to plan toward."""


class NoPath(RuntimeError):
    """Goal unreachable even through unknown cells."""


def known_map(grid: GridMap, merged: np.ndarray) -> np.ndarray:
    """Collapse truth + merged explored mask into {UNKNOWN, KNOWN_FREE, KNOWN_WALL}."""
    out = np.zeros(merged.shape, dtype=np.uint8)
    out[merged & (grid.cells == WALL)] = KNOWN_WALL
    out[merged & (grid.cells != WALL)] = KNOWN_FREE
    return out


# ---- navigation primitives ----


def bfs_distance_map(known: np.ndarray, source: Cell) -> np.ndarray:
    """4-connected shortest step counts over KnownFree cells; everything else
    (walls, unknown, unreachable) is +inf."""
    h, w = known.shape
    dist = np.full((h, w), math.inf)
    sx, sy = source
    if known[sy, sx] != KNOWN_FREE:
        return dist
    dist[sy, sx] = 0.0
    queue = [(sx, sy)]
    head = 0
    while head < len(queue):
        x, y = queue[head]
        head += 1
        d = dist[y, x] + 1
        for nx, ny in ((x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)):
            if 0 <= nx < w and 0 <= ny < h and known[ny, nx] == KNOWN_FREE:
                if d < dist[ny, nx]:
                    dist[ny, nx] = d
                    queue.append((nx, ny))
    return dist


def astar_path(known: np.ndarray, start: AgentPose, goal: Cell,
               forward_cost: float = 1.0, turn_cost: float = 0.5) -> list[Action]:
    """Cheapest action sequence from start to the goal cell by time cost.

    The search runs over (cell, heading) nodes; forward steps cost
    forward_cost, turns cost turn_cost. Unknown cells are traversable (goals
    routinely lie beyond the explored map); known walls are not. Raises
    NoPath when the goal is a known wall or unreachable.
    """
    h, w = known.shape

    def passable(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and known[y, x] != KNOWN_WALL

    gx, gy = goal
    if (start.x, start.y) == goal:
        return []
    if not passable(gx, gy):
        raise NoPath(f"goal {goal} is a known wall or out of bounds")

    def heuristic(x: int, y: int) -> float:
        return (abs(x - gx) + abs(y - gy)) * forward_cost

    start_node = (start.x, start.y, int(start.heading))
    best: dict[tuple[int, int, int], float] = {start_node: 0.0}
    came: dict[tuple[int, int, int], tuple[tuple[int, int, int], Action]] = {}
    counter = 0
    frontier = [(heuristic(start.x, start.y), 0, start_node)]
    while frontier:
        f, _, node = heapq.heappop(frontier)
        x, y, hd = node
        g = best[node]
        if f > g + heuristic(x, y):
            continue
        if (x, y) == goal:
            actions: list[Action] = []
            cur = node
            while cur != start_node:
                cur, act = came[cur]
                actions.append(act)
            actions.reverse()
            return actions
        heading = Heading(hd)
        dx, dy = heading.vector
        steps = [
            (Action.FORWARD, (x + dx, y + dy, hd), forward_cost),
            (Action.TURN_LEFT, (x, y, int(heading.turned_left())), turn_cost),
            (Action.TURN_RIGHT, (x, y, int(heading.turned_right())), turn_cost),
        ]
        for act, nxt, cost in steps:
            if act == Action.FORWARD and not passable(nxt[0], nxt[1]):
                continue
            ng = g + cost
            if ng < best.get(nxt, math.inf) - 1e-12:
                best[nxt] = ng
                came[nxt] = (node, act)
                counter += 1
                heapq.heappush(frontier, (ng + heuristic(nxt[0], nxt[1]), counter, nxt))
    raise NoPath(f"no route from {start.cell} to {goal}")


@lru_cache(maxsize=16)
def _disk_offsets(r: int) -> list[Cell]:
    out = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx * dx + dy * dy <= r * r:
                out.append((dx, dy))
    return out


def information_gain(merged: np.ndarray, cell: Cell, r_ig: int = DEFAULT_IG_RADIUS) -> int:
    """Number of unexplored cells within Euclidean distance r_ig of cell."""
    h, w = merged.shape
    cx, cy = cell
    count = 0
    for dx, dy in _disk_offsets(r_ig):
        x, y = cx + dx, cy + dy
        if 0 <= x < w and 0 <= y < h and not merged[y, x]:
            count += 1
    return count


@dataclass(frozen=True)
class FrontierCluster:
    center: Cell
    weight: int
    members: tuple[Cell, ...]


def cluster_frontiers(cells: list[Cell]) -> list[FrontierCluster]:
    """8-connected components of a cell set. Center is the member nearest the
    component centroid (ties toward smallest (row, col)); weight is the size."""
    remaining = set(cells)
    clusters = []
    for seed_cell in sorted(cells, key=rowmajor_key):
        if seed_cell not in remaining:
            continue
        comp = [seed_cell]
        remaining.discard(seed_cell)
        head = 0
        while head < len(comp):
            x, y = comp[head]
            head += 1
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    nb = (x + dx, y + dy)
                    if nb in remaining:
                        remaining.discard(nb)
                        comp.append(nb)
        cx = sum(c[0] for c in comp) / len(comp)
        cy = sum(c[1] for c in comp) / len(comp)
        center = min(
            comp,
            key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, rowmajor_key(c)),
        )
        clusters.append(
            FrontierCluster(center=center, weight=len(comp), members=tuple(sorted(comp, key=rowmajor_key)))
        )
    return clusters


# ---- baseline planners ----


def plan_utility(state: ExplorationState, known: np.ndarray, grid: GridMap,
                 pose: AgentPose, r_ig: int = DEFAULT_IG_RADIUS) -> Cell:
    """Frontier with the largest information gain."""
    frontiers = frontier_cells(grid, state.merged)
    if not frontiers:
        raise NoFrontier("no frontier cells")
    return max(frontiers, key=lambda c: (information_gain(state.merged, c, r_ig), _neg_key(c)))


def _neg_key(cell: Cell) -> tuple[int, int]:
    # max() with this secondary key prefers the smallest (row, col)
    return (-cell[1], -cell[0])


def plan_nearest(state: ExplorationState, known: np.ndarray, grid: GridMap,
                 pose: AgentPose) -> Cell:
    """Frontier at the smallest BFS distance from the agent through known
    free cells; falls back to Euclidean distance if every frontier is
    unreachable through the known map."""
    frontiers = frontier_cells(grid, state.merged)
    if not frontiers:
        raise NoFrontier("no frontier cells")
    dist = bfs_distance_map(known, pose.cell)
    best = min(frontiers, key=lambda c: (dist[c[1], c[0]], rowmajor_key(c)))
    if math.isinf(dist[best[1], best[0]]):
        best = min(
            frontiers,
            key=lambda c: ((c[0] - pose.x) ** 2 + (c[1] - pose.y) ** 2, rowmajor_key(c)),
        )
    return best


@dataclass(frozen=True)
class RrtParams:
    step_len: int = 3
    max_iters: int = 300
    target_cap: int = 20
    ig_radius: int = DEFAULT_IG_RADIUS
    maximize_utility: bool = True  # False flips to cost-minimisation of IG - N


def plan_rrt(state: ExplorationState, known: np.ndarray, grid: GridMap,
             pose: AgentPose, params: RrtParams, rng: np.random.Generator) -> Cell:
    """Random-tree frontier proposal.

    Grows a tree of straight, collision-free segments from the agent; sample
    points that land in unknown space become targets. Targets are clustered
    and scored by information gain against Euclidean travel distance, both
    min-max normalised over clusters. Falls back to the nearest frontier when
    no target is found.
    """
    h, w = known.shape
    nodes = [pose.cell]
    targets: list[Cell] = []
    for _ in range(params.max_iters):
        if len(targets) >= params.target_cap:
            break
        sample = (int(rng.integers(w)), int(rng.integers(h)))
        near = min(nodes, key=lambda n: ((n[0] - sample[0]) ** 2 + (n[1] - sample[1]) ** 2, rowmajor_key(n)))
        new = _steer(near, sample, params.step_len)
        if new == near:
            continue
        if not _segment_clear(known, near, new):
            continue
        if known[new[1], new[0]] == UNKNOWN:
            targets.append(new)
        else:
            nodes.append(new)
    if not targets:
        return plan_nearest(state, known, grid, pose)
    clusters = cluster_frontiers(sorted(set(targets), key=rowmajor_key))
    gains = np.array(
        [information_gain(state.merged, c.center, params.ig_radius) for c in clusters],
        dtype=np.float64,
    )
    costs = np.array(
        [math.dist(c.center, pose.cell) for c in clusters], dtype=np.float64
    )
    gains_n = _minmax(gains)
    costs_n = _minmax(costs)
    utility = gains_n - costs_n
    if not params.maximize_utility:
        utility = -utility
    order = sorted(
        range(len(clusters)),
        key=lambda i: (-utility[i], rowmajor_key(clusters[i].center)),
    )
    return clusters[order[0]].center


def _steer(origin: Cell, sample: Cell, step_len: int) -> Cell:
    dx, dy = sample[0] - origin[0], sample[1] - origin[1]
    dist = math.hypot(dx, dy)
    if dist <= step_len:
        return sample
    scale = step_len / dist
    return (origin[0] + round(dx * scale), origin[1] + round(dy * scale))


def _segment_clear(known: np.ndarray, a: Cell, b: Cell) -> bool:
    """No known wall on the rasterised segment between a and b (endpoints included)."""
    return all(known[y, x] != KNOWN_WALL for x, y in bresenham_line(a, b))


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi - lo < 1e-12:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


@dataclass(frozen=True)
class ApfParams:
    influence_radius: float = 6.0
    resistance_gain: float = 1.0
    repeat_penalty: float = 0.5
    max_iters: int = 200


def plan_apf(state: ExplorationState, known: np.ndarray, grid: GridMap,
             poses: list[AgentPose], alive: list[bool], agent_id: int,
             params: ApfParams) -> Cell:
    """Potential-descent frontier selection.

    Builds a potential over known free cells: peers within the influence
    radius add resistance, frontier clusters attract with weight over
    BFS distance from the cluster center.
    The agent then walks downhill, paying a repeat penalty on every visited
    cell, until it rests on a frontier local minimum (or the step budget runs
    out, in which case the nearest frontier from the stopping cell is used).
    """
    frontiers = frontier_cells(grid, state.merged)
    if not frontiers:
        raise NoFrontier("no frontier cells")
    frontier_set = set(frontiers)
    h, w = known.shape
    field = np.zeros((h, w), dtype=np.float64)
    free = known == KNOWN_FREE
    ys, xs = np.nonzero(free)
    pose = poses[agent_id]
    for j, (peer, live) in enumerate(zip(poses, alive)):
        if j == agent_id or not live:
            continue
        d = np.hypot(xs - peer.x, ys - peer.y)
        within = d < params.influence_radius
        field[ys[within], xs[within]] += params.resistance_gain * (
            params.influence_radius - d[within]
        )
    for cluster in cluster_frontiers(frontiers):
        dist = bfs_distance_map(known, cluster.center)
        reach = free & np.isfinite(dist)
        # clamp below one cell so the cluster center itself attracts most
        denom = np.maximum(dist[reach], 0.5)
        field[reach] -= cluster.weight / denom
    current = pose.cell
    for _ in range(params.max_iters):
        x, y = current
        field[y, x] += params.repeat_penalty
        neighbors = [
            (nx, ny)
            for nx, ny in ((x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1))
            if 0 <= nx < w and 0 <= ny < h and free[ny, nx]
        ]
        if not neighbors:
            break
        nxt = min(neighbors, key=lambda c: (field[c[1], c[0]], rowmajor_key(c)))
        if field[nxt[1], nxt[0]] >= field[y, x] and current in frontier_set:
            return current
        current = nxt
    if current in frontier_set:
        return current
    dist = bfs_distance_map(known, current)
    best = min(frontiers, key=lambda c: (dist[c[1], c[0]], rowmajor_key(c)))
    if math.isinf(dist[best[1], best[0]]):
        best = min(
            frontiers,
            key=lambda c: ((c[0] - current[0]) ** 2 + (c[1] - current[1]) ** 2, rowmajor_key(c)),
        )
    return best


def plan_voronoi(state: ExplorationState, known: np.ndarray, grid: GridMap,
                 poses: list[AgentPose], alive: list[bool], agent_id: int,
                 r_ig: int = DEFAULT_IG_RADIUS) -> Cell:
    """Highest-information-gain frontier inside the agent's geodesic Voronoi
    partition; falls back to the global utility choice when the partition
    holds no frontier."""
    frontiers = frontier_cells(grid, state.merged)
    if not frontiers:
        raise NoFrontier("no frontier cells")
    owner = voronoi_partition(known, poses, alive)
    mine = [c for c in frontiers if owner[c[1], c[0]] == agent_id]
    pool = mine if mine else frontiers
    return max(pool, key=lambda c: (information_gain(state.merged, c, r_ig), _neg_key(c)))


def voronoi_partition(known: np.ndarray, poses: list[AgentPose],
                      alive: list[bool]) -> np.ndarray:
    """Assign each known free cell to the geodesically nearest alive agent.

    Ties on BFS distance, including cells unreachable from every agent, go
    to the lowest alive agent id. Walls and unknown cells stay -1.
    """
    owner = np.full(known.shape, -1, dtype=np.int64)
    alive_ids = [j for j, live in enumerate(alive) if live]
    if not alive_ids:
        return owner
    dists = np.stack([bfs_distance_map(known, poses[j].cell) for j in alive_ids])
    free = known == KNOWN_FREE
    nearest = np.argmin(dists, axis=0)
    owner[free] = np.asarray(alive_ids, dtype=np.int64)[nearest[free]]
    return owner
