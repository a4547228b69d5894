"""Scripted expert that walks shortest paths to the active goal."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .gridmap import ACTIONS, Action, Coord, GridMap, move


class Disconnected(ValueError):
    def __init__(self, start: Coord, goal: Coord):
        super().__init__(f"no path from {start} to {goal}")
        self.start, self.goal = start, goal


def plan(grid: GridMap, start: Coord, goal: Coord) -> list[Action]:
    """Minimal-length action sequence from ``start`` to ``goal``.

    Breadth-first search expands neighbours in ``ACTIONS`` order, so among
    equal-length paths the one found first is returned every time.
    """
    if not (grid.is_floor(start) and grid.is_floor(goal)):
        raise Disconnected(start, goal)
    parent: dict[Coord, tuple[Coord, Action] | None] = {start: None}
    frontier = deque([start])
    while frontier and goal not in parent:
        pos = frontier.popleft()
        for a in ACTIONS:
            nxt = move(grid, pos, a)
            if nxt not in parent:
                parent[nxt] = (pos, a)
                frontier.append(nxt)
    if goal not in parent:
        raise Disconnected(start, goal)
    actions = []
    node = parent[goal]
    while node is not None:
        pos, a = node
        actions.append(a)
        node = parent[pos]
    actions.reverse()
    return actions


@dataclass
class TeacherPolicy:
    """Deterministic shortest-path expert.

    With ``respawn`` the teacher reappears at its spawn on the step after it
    reaches the goal and walks the same path again; otherwise it idles on the
    goal. ``noise`` is the probability of a uniformly random move per step
    (then it re-plans from wherever it lands); keep it at 0 for the analytic
    properties the oracle relies on.
    """

    grid: GridMap
    respawn: bool = True
    noise: float = 0.0
    _plans: dict = field(default_factory=dict, repr=False)

    tie_break_order = ACTIONS

    def plan(self, start: Coord, goal: Coord) -> tuple[Action, ...]:
        key = (start, goal)
        if key not in self._plans:
            self._plans[key] = tuple(plan(self.grid, start, goal))
        return self._plans[key]

    def initial(self, goal: Coord) -> tuple[Coord, tuple[Action, ...], int]:
        spawn = self.grid.teacher_spawn
        return spawn, self.plan(spawn, goal), 0

    def advance(
        self,
        pos: Coord,
        path: tuple[Action, ...],
        cursor: int,
        goal: Coord,
        rng: np.random.Generator | None = None,
    ) -> tuple[Coord, tuple[Action, ...], int]:
        """One teacher step: returns the new ``(position, plan, cursor)``."""
        if cursor < len(path):
            if self.noise > 0 and rng is not None and rng.random() < self.noise:
                pos = move(self.grid, pos, ACTIONS[rng.integers(len(ACTIONS))])
                return pos, self.plan(pos, goal), 0
            return move(self.grid, pos, path[cursor]), path, cursor + 1
        if self.respawn:
            return self.initial(goal)
        return pos, path, cursor


def teacher_action(policy: TeacherPolicy, state) -> Action | None:
    """Next planned move of the teacher in ``state``; ``None`` when idle or respawning."""
    if state.teacher_plan is None or state.teacher_plan_cursor >= len(state.teacher_plan):
        return None
    return state.teacher_plan[state.teacher_plan_cursor]
