"""Multi-phase training: level sequences, teacher-masking schedules, zero-shot evaluation."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .a3c import EvalSummary, TrainConfig, evaluate, train
from .gridmap import GridMap, resolve_map
from .gridworld import EPISODE_CAP, ObservationSpec, World, reset, transition
from .metrics import EpisodeStats, MetricsSink

DEFAULT_MASK_SCHEDULE = ((0, 0.25), (250_000, 0.5), (500_000, 0.75), (750_000, 1.0))


class InvalidSchedule(ValueError):
    pass


class ShapeIncompatibleWarmStart(ValueError):
    pass


def validate_schedule(schedule) -> tuple[tuple[int, float], ...]:
    entries = tuple((int(s), float(p)) for s, p in schedule)
    if not entries or entries[0][0] != 0:
        raise InvalidSchedule("mask schedule must start at step 0")
    for (s0, p0), (s1, p1) in zip(entries, entries[1:]):
        if s1 <= s0:
            raise InvalidSchedule(f"start steps must strictly increase ({s0} then {s1})")
        if p1 < p0:
            raise InvalidSchedule(f"probabilities must not decrease ({p0} then {p1})")
    for _, p in entries:
        if not 0.0 <= p <= 1.0:
            raise InvalidSchedule(f"probability {p} outside [0, 1]")
    return entries


def mask_prob_at(schedule, global_step: int) -> float:
    """Probability of the last entry whose start step is at most ``global_step``."""
    entries = validate_schedule(schedule)
    prob = entries[0][1]
    for start, p in entries:
        if start > global_step:
            break
        prob = p
    return prob


def scale_schedule(schedule, factor: float) -> tuple[tuple[int, float], ...]:
    """Same probabilities, boundaries multiplied by ``factor`` (for shorter budgets)."""
    return validate_schedule((int(round(s * factor)), p) for s, p in schedule)


@dataclass(frozen=True)
class CurriculumPhase:
    level: str
    step_budget: int
    variant: str = "LAGT"
    mask_schedule: tuple[tuple[int, float], ...] = ((0, 0.0),)
    warm_start: str | None = None  # name of an earlier phase
    name: str | None = None
    with_teacher: bool = True

    def __post_init__(self):
        if self.step_budget < 1:
            raise ValueError("step_budget must be >= 1")
        object.__setattr__(self, "mask_schedule", validate_schedule(self.mask_schedule))

    @property
    def label(self) -> str:
        return self.name or self.level


@dataclass
class CurriculumResult:
    params: dict[str, nn.NetworkParams]
    checkpoints: dict[str, Path]
    stats: list[EpisodeStats]
    total_steps: int
    spec: dict[str, ObservationSpec] = field(default_factory=dict)


def curriculum_canvas(grids: list[GridMap]) -> tuple[int, int]:
    return (max(g.height for g in grids), max(g.width for g in grids))


def run_curriculum(phases: list[CurriculumPhase], config: TrainConfig, *, view: str = "local",
                   radius: int = 3, lstm: int = 0, conv_channels: int = 16, dense_units: int = 128,
                   run_dir: str | Path | None = None, metrics_path: str | Path | None = None) -> CurriculumResult:
    """Train the phases in order, threading warm starts and a global step counter.

    Global views are padded to the largest level of the curriculum so every
    phase shares one network input shape.
    """
    labels = [p.label for p in phases]
    if len(set(labels)) != len(labels):
        raise ValueError(f"phase names must be unique: {labels}")
    grids = [resolve_map(p.level) for p in phases]
    canvas = curriculum_canvas(grids) if view == "global" else None
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    result = CurriculumResult({}, {}, [], 0)
    offset = 0
    with MetricsSink(metrics_path) as sink:
        for phase, grid in zip(phases, grids):
            spec = ObservationSpec(phase.variant, view, radius, canvas)
            init = None
            if phase.warm_start is not None:
                if phase.warm_start not in result.params:
                    raise ValueError(f"{phase.label}: warm start {phase.warm_start!r} is not an earlier phase")
                init = result.params[phase.warm_start]
                if tuple(init.input_shape) != tuple(spec.shape(grid)):
                    raise ShapeIncompatibleWarmStart(
                        f"{phase.label}: checkpoint input {tuple(init.input_shape)} vs level {spec.shape(grid)}")
            start = offset
            schedule = phase.mask_schedule
            cfg = replace(config, total_steps=phase.step_budget)
            res = train(cfg, grid, spec, lambda step: mask_prob_at(schedule, step - start),
                        lstm=lstm, with_teacher=phase.with_teacher, init_params=init,
                        conv_channels=conv_channels, dense_units=dense_units, sink=sink, step_offset=offset)
            offset += res.global_step
            result.params[phase.label] = res.params
            result.spec[phase.label] = spec
            if run_dir is not None:
                path = run_dir / f"{phase.label}.ckpt"
                nn.save_checkpoint(path, res.params)
                result.checkpoints[phase.label] = path
        result.stats = list(sink.stats)
    result.total_steps = offset
    return result


def params_digest(params: nn.NetworkParams) -> str:
    return hashlib.sha256(np.ascontiguousarray(params.flat).tobytes()).hexdigest()


def zero_shot_eval(checkpoint: nn.NetworkParams | str | Path, level: GridMap, spec: ObservationSpec,
                   episodes: int, rng: np.random.Generator, *, with_teacher: bool = True,
                   greedy: bool = True, mask_prob: float = 0.0) -> EvalSummary:
    """Run a frozen policy on ``level``; the parameters are left untouched."""
    params = checkpoint if isinstance(checkpoint, nn.NetworkParams) else nn.load_checkpoint(checkpoint)
    if tuple(params.input_shape) != tuple(spec.shape(level)):
        raise ShapeIncompatibleWarmStart(
            f"checkpoint input {tuple(params.input_shape)} vs level {spec.shape(level)}")
    world = World.make(level, spec, with_teacher=with_teacher)
    return evaluate(params, world, episodes, rng, greedy=greedy, mask_prob=mask_prob)


def random_walk_baseline(level: GridMap, episodes: int, rng: np.random.Generator) -> EvalSummary:
    """Uniform random actions, scored like :func:`zero_shot_eval`."""
    world = World.make(level, with_teacher=False)
    steps = []
    success = 0
    for _ in range(episodes):
        state, _ = reset(world, 0.0, rng)
        reached = False
        while not state.done:
            state, _, reached = transition(world, state, int(rng.integers(4)))
        success += reached
        steps.append(state.step_count if reached else EPISODE_CAP)
    return EvalSummary(episodes, float(np.mean(steps)), success / episodes, steps)
