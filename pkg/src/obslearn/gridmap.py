"""Static level geometry: the ASCII map format, cell moves and bundled levels.

Map alphabet::

    #  wall
    .  floor
    G  goal candidate (floor)
    S  learner spawn (floor)
    T  teacher spawn (floor)

Coordinates are ``(row, col)`` with the origin in the top-left corner.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path

import numpy as np

Coord = tuple[int, int]

BUNDLED_MAPS = ("level0", "level1", "level2", "level3", "nine_rooms")


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


# Action order doubles as the deterministic tie-break order everywhere.
ACTIONS = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)
DELTAS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class MapError(ValueError):
    """Base class for malformed map documents."""


class NonRectangular(MapError):
    pass


class UnknownSymbol(MapError):
    def __init__(self, char: str, row: int, col: int):
        super().__init__(f"unknown symbol {char!r} at row {row}, col {col}")
        self.char, self.row, self.col = char, row, col


class MissingSpawn(MapError):
    pass


class UnreachableCell(MapError):
    pass


class NoGoalCandidates(MapError):
    pass


# eq=False: identity hashing, so maps can key caches.
@dataclass(frozen=True, eq=False)
class GridMap:
    name: str
    walls: np.ndarray  # bool, shape (height, width); True = Wall
    goal_candidates: tuple[Coord, ...]
    learner_spawn: Coord
    teacher_spawn: Coord
    _floor: tuple[Coord, ...] = field(default=(), repr=False, compare=False)

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    def is_floor(self, pos: Coord) -> bool:
        r, c = pos
        return 0 <= r < self.height and 0 <= c < self.width and not self.walls[r, c]

    def floor_cells(self) -> tuple[Coord, ...]:
        """All floor cells in row-major order."""
        if not self._floor:
            cells = tuple((int(r), int(c)) for r, c in zip(*np.nonzero(~self.walls)))
            object.__setattr__(self, "_floor", cells)
        return self._floor

    def to_text(self) -> str:
        rows = [["#" if w else "." for w in row] for row in self.walls]
        for r, c in self.goal_candidates:
            rows[r][c] = "G"
        rows[self.learner_spawn[0]][self.learner_spawn[1]] = "S"
        rows[self.teacher_spawn[0]][self.teacher_spawn[1]] = "T"
        return "\n".join("".join(row) for row in rows) + "\n"


def move(grid: GridMap, pos: Coord, action: int) -> Coord:
    """One cardinal step; walls are elastic (the agent stays put)."""
    dr, dc = DELTAS[Action(action)]
    nxt = (pos[0] + dr, pos[1] + dc)
    return nxt if grid.is_floor(nxt) else pos


def flood_fill(grid: GridMap, start: Coord) -> set[Coord]:
    seen = {start}
    frontier = deque([start])
    while frontier:
        pos = frontier.popleft()
        for a in ACTIONS:
            nxt = move(grid, pos, a)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def load_map(text: str, name: str = "map") -> GridMap:
    """Parse and validate an ASCII map document."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise NonRectangular("empty map")
    width = len(lines[0])
    for r, line in enumerate(lines):
        if len(line) != width:
            raise NonRectangular(f"row {r} has length {len(line)}, expected {width}")

    walls = np.ones((len(lines), width), dtype=bool)
    goals: list[Coord] = []
    learner = teacher = None
    for r, line in enumerate(lines):
        for c, ch in enumerate(line):
            if ch == "#":
                continue
            if ch not in ".GST":
                raise UnknownSymbol(ch, r, c)
            walls[r, c] = False
            if ch == "G":
                goals.append((r, c))
            elif ch == "S":
                if learner is not None:
                    raise MissingSpawn("more than one learner spawn 'S'")
                learner = (r, c)
            elif ch == "T":
                if teacher is not None:
                    raise MissingSpawn("more than one teacher spawn 'T'")
                teacher = (r, c)
    if not goals:
        raise NoGoalCandidates("map has no 'G' cells")
    if learner is None or teacher is None:
        raise MissingSpawn("map needs exactly one 'S' and one 'T'")

    border = np.ones_like(walls)
    border[1:-1, 1:-1] = False
    if np.any(border & ~walls):
        r, c = np.argwhere(border & ~walls)[0]
        raise UnreachableCell(f"floor cell ({r}, {c}) on the map border")

    grid = GridMap(name, walls, tuple(goals), learner, teacher)
    reachable = flood_fill(grid, learner)
    for cell in grid.floor_cells():
        if cell not in reachable:
            raise UnreachableCell(f"cell {cell} is not connected to the learner spawn")
    return grid


def load_map_file(path: str | Path) -> GridMap:
    path = Path(path)
    return load_map(path.read_text(encoding="utf-8"), name=path.stem)


def bundled_map(name: str) -> GridMap:
    """Load one of the maps shipped with the package (see ``BUNDLED_MAPS``)."""
    if name not in BUNDLED_MAPS:
        raise KeyError(f"unknown bundled map {name!r}; choose from {BUNDLED_MAPS}")
    text = resources.files("obslearn.maps").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return load_map(text, name=name)


def resolve_map(name_or_path: str) -> GridMap:
    if name_or_path in BUNDLED_MAPS:
        return bundled_map(name_or_path)
    return load_map_file(name_or_path)


def bfs_distances(grid: GridMap, source: Coord) -> dict[Coord, int]:
    """Shortest-path distance from ``source`` to every reachable floor cell."""
    dist = {source: 0}
    frontier = deque([source])
    while frontier:
        pos = frontier.popleft()
        for a in ACTIONS:
            nxt = move(grid, pos, a)
            if nxt not in dist:
                dist[nxt] = dist[pos] + 1
                frontier.append(nxt)
    return dist


def diameter(grid: GridMap) -> int:
    return max(max(bfs_distances(grid, c).values()) for c in grid.floor_cells())
