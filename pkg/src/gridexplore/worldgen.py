"""Procedural room-and-door maps on a bounded occupancy grid.

Maps are generated by recursive splitting of the interior: each split adds a
straight wall with a single one-cell door, so every free cell stays reachable
from every other by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import AgentPose, Cell, Heading

FREE = 0
WALL = 1

_ASCII = {FREE: ".", WALL: "#"}
_ASCII_INV = {v: k for k, v in _ASCII.items()}

# Split geometry: a child room needs a 3-cell interior span, plus one wall cell.
_MIN_ROOM_SPAN = 3
_MAX_ATTEMPTS = 128


class InvalidSpec(ValueError):
    """Raised when a MapSpec cannot be realised on the requested grid."""


class NotEnoughFreeCells(ValueError):
    """Raised when more agents are requested than free cells exist."""


@dataclass(frozen=True)
class MapSpec:
    width: int = 15
    height: int = 15
    rooms: tuple[int, int] = (4, 9)
    seed: int = 0


@dataclass
class GridMap:
    cells: np.ndarray  # uint8 (height, width); FREE or WALL

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2:
            raise ValueError("grid must be 2-D")

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_wall(self, cell: Cell) -> bool:
        return bool(self.cells[cell[1], cell[0]] == WALL)

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self.cells[cell[1], cell[0]] == FREE

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(self.cells == FREE)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    def to_ascii(self) -> str:
        return "\n".join(
            "".join(_ASCII[int(v)] for v in row) for row in self.cells
        )

    @classmethod
    def from_ascii(cls, text: str) -> "GridMap":
        lines = [ln for ln in text.splitlines() if ln.strip() != ""]
        if not lines:
            raise ValueError("empty map text")
        width = len(lines[0])
        rows = []
        for ln in lines:
            if len(ln) != width:
                raise ValueError("map rows must all have the same length")
            try:
                rows.append([_ASCII_INV[ch] for ch in ln])
            except KeyError as exc:
                raise ValueError(f"unknown map character {exc.args[0]!r}") from None
        return cls(np.array(rows, dtype=np.uint8))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ascii() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GridMap":
        return cls.from_ascii(Path(path).read_text())


@dataclass
class _Leaf:
    # Interior rectangle of free cells: x0/y0 inclusive, w/h spans.
    x0: int
    y0: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def vertical_positions(self) -> list[int]:
        # Wall column c leaves >= _MIN_ROOM_SPAN free columns on both sides.
        return list(range(self.x0 + _MIN_ROOM_SPAN, self.x0 + self.w - _MIN_ROOM_SPAN))

    def horizontal_positions(self) -> list[int]:
        return list(range(self.y0 + _MIN_ROOM_SPAN, self.y0 + self.h - _MIN_ROOM_SPAN))


def max_room_count(width: int, height: int) -> int:
    """Upper bound on rooms for a width x height map under the split geometry."""
    iw, ih = width - 2, height - 2
    if iw < _MIN_ROOM_SPAN or ih < _MIN_ROOM_SPAN:
        return 0
    kx = (iw + 1) // (_MIN_ROOM_SPAN + 1)
    ky = (ih + 1) // (_MIN_ROOM_SPAN + 1)
    return kx * ky


def generate_map(spec: MapSpec) -> GridMap:
    """Generate a bounded map whose room count falls inside spec.rooms.

    Deterministic in spec.seed. Raises InvalidSpec when the requested room
    range cannot fit on the grid.
    """
    lo, hi = spec.rooms
    if spec.width < 7 or spec.height < 7:
        raise InvalidSpec(f"maps must be at least 7x7, got {spec.width}x{spec.height}")
    if lo < 1 or hi < lo:
        raise InvalidSpec(f"bad room range {spec.rooms}")
    if lo > max_room_count(spec.width, spec.height):
        raise InvalidSpec(
            f"cannot fit {lo} rooms on a {spec.width}x{spec.height} map "
            f"(max {max_room_count(spec.width, spec.height)})"
        )
    for attempt in range(_MAX_ATTEMPTS):
        rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, attempt])
        grid, count = _try_generate(spec, rng)
        if lo <= count <= hi:
            return grid
    raise InvalidSpec(
        f"failed to hit {spec.rooms} rooms on {spec.width}x{spec.height} "
        f"after {_MAX_ATTEMPTS} attempts"
    )


def _try_generate(spec: MapSpec, rng: np.random.Generator) -> tuple[GridMap, int]:
    cells = np.full((spec.height, spec.width), WALL, dtype=np.uint8)
    cells[1:-1, 1:-1] = FREE
    leaves = [_Leaf(1, 1, spec.width - 2, spec.height - 2)]
    target = int(rng.integers(spec.rooms[0], spec.rooms[1] + 1))
    while len(leaves) < target:
        split = _pick_split(cells, leaves, rng)
        if split is None:
            break
        leaf_idx, vertical, pos = split
        leaf = leaves.pop(leaf_idx)
        if vertical:
            cells[leaf.y0:leaf.y0 + leaf.h, pos] = WALL
            door_y = leaf.y0 + int(rng.integers(leaf.h))
            cells[door_y, pos] = FREE
            leaves.append(_Leaf(leaf.x0, leaf.y0, pos - leaf.x0, leaf.h))
            leaves.append(_Leaf(pos + 1, leaf.y0, leaf.x0 + leaf.w - pos - 1, leaf.h))
        else:
            cells[pos, leaf.x0:leaf.x0 + leaf.w] = WALL
            door_x = leaf.x0 + int(rng.integers(leaf.w))
            cells[pos, door_x] = FREE
            leaves.append(_Leaf(leaf.x0, leaf.y0, leaf.w, pos - leaf.y0))
            leaves.append(_Leaf(leaf.x0, pos + 1, leaf.w, leaf.y0 + leaf.h - pos - 1))
    return GridMap(cells), len(leaves)


def _pick_split(
    cells: np.ndarray, leaves: list[_Leaf], rng: np.random.Generator
) -> tuple[int, bool, int] | None:
    """Choose (leaf index, vertical?, wall position) or None if nothing splits.

    Prefers the largest splittable leaf; the wall position is sampled among
    positions whose extension cells beyond the leaf are solid wall, so no
    existing door gets sealed off.
    """
    order = sorted(range(len(leaves)), key=lambda i: (-leaves[i].area, i))
    for idx in order:
        leaf = leaves[idx]
        options: list[tuple[bool, int]] = []
        for c in leaf.vertical_positions():
            if cells[leaf.y0 - 1, c] == WALL and cells[leaf.y0 + leaf.h, c] == WALL:
                options.append((True, c))
        for r in leaf.horizontal_positions():
            if cells[r, leaf.x0 - 1] == WALL and cells[r, leaf.x0 + leaf.w] == WALL:
                options.append((False, r))
        if options:
            vertical, pos = options[int(rng.integers(len(options)))]
            return idx, vertical, pos
    return None


def count_rooms(grid: GridMap) -> int:
    """Number of maximal free rectangles ('rooms') counted as connected
    components after removing door cells (free cells with walls on exactly
    two opposite sides)."""
    free = grid.free_mask()
    h, w = free.shape
    padded = np.pad(~free, 1, constant_values=True)  # walls plus border
    wall = padded
    door = np.zeros_like(free)
    for y in range(h):
        for x in range(w):
            if not free[y, x]:
                continue
            n = wall[y, x + 1]
            s = wall[y + 2, x + 1]
            e = wall[y + 1, x + 2]
            v = wall[y + 1, x]
            if (n and s and not e and not v) or (e and v and not n and not s):
                door[y, x] = True
    interior = free & ~door
    seen = np.zeros_like(free)
    count = 0
    for y in range(h):
        for x in range(w):
            if interior[y, x] and not seen[y, x]:
                count += 1
                stack = [(x, y)]
                seen[y, x] = True
                while stack:
                    cx, cy = stack.pop()
                    for nx, ny in ((cx, cy - 1), (cx - 1, cy), (cx + 1, cy), (cx, cy + 1)):
                        if 0 <= nx < w and 0 <= ny < h and interior[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((nx, ny))
    return count


def spawn_agents(grid: GridMap, n_agents: int, seed: int) -> list[AgentPose]:
    """Place n_agents on distinct free cells, uniformly at random, with
    uniformly random headings. Deterministic in seed."""
    free = grid.free_cells()
    if n_agents > len(free):
        raise NotEnoughFreeCells(f"{n_agents} agents requested, {len(free)} free cells")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(free), size=n_agents, replace=False)
    headings = rng.integers(0, 4, size=n_agents)
    return [
        AgentPose(free[int(i)][0], free[int(i)][1], Heading(int(hd)))
        for i, hd in zip(picks, headings)
    ]
