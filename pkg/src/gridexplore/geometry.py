"""Shared grid primitives: cells, headings, poses, atomic moves."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterator, Tuple

Cell = Tuple[int, int]  # (x, y); x is the column, y is the row

# 4-neighbourhood in deterministic scan order (up, left, right, down by row-major key)
DIRS4: list[Cell] = [(0, -1), (-1, 0), (1, 0), (0, 1)]
# 8-neighbourhood, same ordering convention
DIRS8: list[Cell] = [
    (-1, -1), (0, -1), (1, -1),
    (-1, 0), (1, 0),
    (-1, 1), (0, 1), (1, 1),
]


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    @property
    def vector(self) -> Cell:
        return _HEADING_VECTORS[self]

    def turned_left(self) -> "Heading":
        return Heading((self - 1) % 4)

    def turned_right(self) -> "Heading":
        return Heading((self + 1) % 4)


# North points toward decreasing y (row 0 is the top of the map)
_HEADING_VECTORS: dict[Heading, Cell] = {
    Heading.NORTH: (0, -1),
    Heading.EAST: (1, 0),
    Heading.SOUTH: (0, 1),
    Heading.WEST: (-1, 0),
}


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


@dataclass(frozen=True)
class AgentPose:
    x: int
    y: int
    heading: Heading

    @property
    def cell(self) -> Cell:
        return (self.x, self.y)

    def applied(self, action: Action) -> "AgentPose":
        if action == Action.FORWARD:
            dx, dy = self.heading.vector
            return replace(self, x=self.x + dx, y=self.y + dy)
        if action == Action.TURN_LEFT:
            return replace(self, heading=self.heading.turned_left())
        return replace(self, heading=self.heading.turned_right())


def rowmajor_key(cell: Cell) -> Tuple[int, int]:
    """Sort key for the deterministic tie-break order (top row first, then left)."""
    return (cell[1], cell[0])


def neighbors4(cell: Cell, width: int, height: int) -> Iterator[Cell]:
    x, y = cell
    for dx, dy in DIRS4:
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            yield (nx, ny)


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def euclidean_sq(a: Cell, b: Cell) -> int:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
