"""Episode frames as binary PPM images."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .gridmap import GridMap
from .a3c import _sample
from .gridworld import EnvState, ObservationSpec, World, reset, step

WALL = (255, 0, 0)
BACKGROUND = (0, 0, 0)
LEARNER = (0, 255, 0)
TEACHER = (0, 0, 255)
GOAL = (255, 105, 180)


def draw(grid: GridMap, state: EnvState, scale: int = 16) -> np.ndarray:
    """``(height*scale, width*scale, 3)`` uint8 image; the learner is drawn over the goal and teacher."""
    img = np.zeros((grid.height, grid.width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    img[grid.walls] = WALL
    img[grid.goal_candidates[state.active_goal]] = GOAL
    if state.teacher_pos is not None and not state.teacher_masked:
        img[state.teacher_pos] = TEACHER
    img[state.learner_pos] = LEARNER
    return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def render_episode(params: nn.NetworkParams, grid: GridMap, spec: ObservationSpec, seed: int,
                   out_dir: str | Path, *, scale: int = 16, mask_prob: float = 0.0,
                   with_teacher: bool = True, greedy: bool = True) -> list[Path]:
    """Roll out one episode and write ``frame_%04d.ppm`` for the start and every step."""
    if tuple(params.input_shape) != tuple(spec.shape(grid)):
        raise nn.ShapeMismatch(f"checkpoint input {tuple(params.input_shape)} vs map {spec.shape(grid)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    world = World.make(grid, spec, with_teacher=with_teacher)
    state, obs = reset(world, mask_prob, rng)
    rnn = params.zero_state()
    paths = []

    def emit(s: EnvState):
        p = out_dir / f"frame_{len(paths):04d}.ppm"
        write_ppm(p, draw(grid, s, scale))
        paths.append(p)

    emit(state)
    while not state.done:
        tr = nn.forward(params, obs.data, rnn)
        rnn = tr.state
        probs = tr.policy[0]
        action = int(np.argmax(probs)) if greedy else _sample(probs, rng)
        state, result = step(world, state, action, rng)
        obs = result.observation
        emit(state)
    return paths

