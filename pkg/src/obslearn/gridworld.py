"""Multi-room navigation shared by a learner and a scripted teacher.

The teacher never blocks the learner and never changes its reward: it is
only visible, optionally, through the ``T`` observation channel.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .gridmap import Action, Coord, GridMap, move
from .teacher import TeacherPolicy

EPISODE_CAP = 100
VARIANTS = ("LA", "LAG", "LAT", "LAGT")


class SteppedAfterDone(RuntimeError):
    pass


@dataclass(frozen=True)
class ObservationSpec:
    """Which channels the learner sees and through what window.

    ``canvas`` pads global views to a fixed ``(height, width)`` with wall
    cells so levels of different sizes share one network input shape.
    """

    variant: str = "LAGT"
    view: str = "global"
    radius: int = 3
    canvas: tuple[int, int] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.view not in ("global", "local"):
            raise ValueError(f"view must be 'global' or 'local', got {self.view!r}")
        if self.radius < 1:
            raise ValueError("local radius must be >= 1")

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.variant)

    def shape(self, grid: GridMap) -> tuple[int, int, int]:
        if self.view == "local":
            side = 2 * self.radius + 1
            return (len(self.variant), side, side)
        h, w = self.canvas or grid.shape
        if h < grid.height or w < grid.width:
            raise ValueError(f"canvas {self.canvas} smaller than map {grid.shape}")
        return (len(self.variant), h, w)


@dataclass(frozen=True)
class Observation:
    channels: tuple[str, ...]
    data: np.ndarray

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.channels.index(name)]


@dataclass(frozen=True)
class EnvState:
    learner_pos: Coord
    teacher_pos: Coord | None  # None when the world has no teacher
    active_goal: int
    step_count: int = 0
    teacher_masked: bool = False
    teacher_plan: tuple[Action, ...] | None = None
    teacher_plan_cursor: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


@dataclass(frozen=True)
class World:
    """Everything static about an environment instance.

    ``teacher=None`` removes the teacher entirely; ``max_steps=None`` disables
    the episode cap (used by the tabular oracle).
    """

    grid: GridMap
    spec: ObservationSpec = ObservationSpec()
    teacher: TeacherPolicy | None = None
    max_steps: int | None = EPISODE_CAP

    @classmethod
    def make(cls, grid: GridMap, spec: ObservationSpec | None = None, *, with_teacher: bool = True,
             respawn: bool = True, teacher_noise: float = 0.0, max_steps: int | None = EPISODE_CAP):
        teacher = TeacherPolicy(grid, respawn=respawn, noise=teacher_noise) if with_teacher else None
        return cls(grid, spec or ObservationSpec(), teacher, max_steps)

    def goal_cell(self, state: EnvState) -> Coord:
        return self.grid.goal_candidates[state.active_goal]


def initial_state(world: World, goal: int, masked: bool = False) -> EnvState:
    grid = world.grid
    if world.teacher is None:
        return EnvState(grid.learner_spawn, None, goal, teacher_masked=masked)
    pos, path, cursor = world.teacher.initial(grid.goal_candidates[goal])
    return EnvState(grid.learner_spawn, pos, goal, 0, masked, path, cursor)


def reset(world: World, mask_prob: float, rng: np.random.Generator) -> tuple[EnvState, Observation]:
    """Start an episode: resample the goal uniformly and draw the teacher mask once."""
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError(f"mask_prob must lie in [0, 1], got {mask_prob}")
    goal = int(rng.integers(len(world.grid.goal_candidates)))
    masked = bool(rng.random() < mask_prob)
    state = initial_state(world, goal, masked)
    return state, observe(state, world.grid, world.spec)


def transition(world: World, state: EnvState, action: int,
               rng: np.random.Generator | None = None) -> tuple[EnvState, float, bool]:
    """Dynamics without rendering an observation: ``(next_state, reward, reached_goal)``."""
    if state.done:
        raise SteppedAfterDone("episode already finished; call reset()")
    learner = move(world.grid, state.learner_pos, action)
    teacher_pos, path, cursor = state.teacher_pos, state.teacher_plan, state.teacher_plan_cursor
    if world.teacher is not None:
        # Masking hides the teacher; it keeps walking.
        teacher_pos, path, cursor = world.teacher.advance(
            teacher_pos, path, cursor, world.goal_cell(state), rng)
    steps = state.step_count + 1
    reached = learner == world.goal_cell(state)
    done = reached or (world.max_steps is not None and steps >= world.max_steps)
    nxt = replace(state, learner_pos=learner, teacher_pos=teacher_pos, teacher_plan=path,
                  teacher_plan_cursor=cursor, step_count=steps, done=done)
    return nxt, (1.0 if reached else 0.0), reached


def step(world: World, state: EnvState, action: int,
         rng: np.random.Generator | None = None) -> tuple[EnvState, StepResult]:
    nxt, reward, reached = transition(world, state, action, rng)
    result = StepResult(observe(nxt, world.grid, world.spec), reward, nxt.done,
                        {"reached_goal": reached, "steps": nxt.step_count})
    return nxt, result


@lru_cache(maxsize=64)
def _layout(grid: GridMap, spec: ObservationSpec) -> np.ndarray:
    """Wall channel, padded for the requested view."""
    walls = grid.walls.astype(np.float64)
    if spec.view == "local":
        r = spec.radius
        return np.pad(walls, r, constant_values=1.0)
    _, h, w = spec.shape(grid)
    return np.pad(walls, ((0, h - grid.height), (0, w - grid.width)), constant_values=1.0)


def observe(state: EnvState, grid: GridMap, spec: ObservationSpec) -> Observation:
    """One-hot channel stack for the learner; channel order follows the variant name."""
    layout = _layout(grid, spec)
    c, h, w = spec.shape(grid)
    data = np.zeros((c, h, w))
    goal = grid.goal_candidates[state.active_goal]
    teacher = None if state.teacher_masked else state.teacher_pos

    if spec.view == "local":
        r = spec.radius
        lr, lc = state.learner_pos
        data[0] = layout[lr:lr + h, lc:lc + w]
        origin = (lr - r, lc - r)
    else:
        data[0] = layout
        origin = (0, 0)

    def put(channel: int, pos: Coord | None):
        if pos is None:
            return
        i, j = pos[0] - origin[0], pos[1] - origin[1]
        if 0 <= i < h and 0 <= j < w:
            data[channel, i, j] = 1.0

    put(1, state.learner_pos)
    idx = 2
    if "G" in spec.variant:
        put(idx, goal)
        idx += 1
    if "T" in spec.variant:
        put(idx, teacher)
    return Observation(spec.channels, data)


class GridWorld:
    """Stateful environment handle: one per trainer worker.

    ``reset(mask_prob)`` returns the first observation array and
    ``step(action)`` returns ``(observation_array, reward, done, info)``.
    """

    def __init__(self, world: World, seed=None):
        self.world = world
        self.rng = np.random.default_rng(seed)
        self.state: EnvState | None = None

    @property
    def observation_shape(self) -> tuple[int, int, int]:
        return self.world.spec.shape(self.world.grid)

    @property
    def n_actions(self) -> int:
        return 4

    def reset(self, mask_prob: float = 0.0) -> np.ndarray:
        self.state, obs = reset(self.world, mask_prob, self.rng)
        return obs.data

    def step(self, action: int):
        self.state, result = step(self.world, self.state, action, self.rng)
        return result.observation.data, result.reward, result.done, result.info
