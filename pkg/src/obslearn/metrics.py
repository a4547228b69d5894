"""Episode metrics: the CSV stream written during training and curve smoothing."""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass
from pathlib import Path

CSV_HEADER = ("global_step", "episode", "steps_to_goal", "success", "return",
              "level", "variant", "lstm", "seed")


@dataclass(frozen=True)
class EpisodeStats:
    global_step: int
    episode_index: int
    steps_to_goal: int  # EPISODE_CAP when the goal was not reached
    success: bool
    discounted_return: float
    level: str
    variant: str
    lstm: int
    seed: int

    def row(self) -> list[str]:
        return [str(self.global_step), str(self.episode_index), str(self.steps_to_goal),
                str(int(self.success)), repr(float(self.discounted_return)), self.level,
                self.variant, str(self.lstm), str(self.seed)]

    @classmethod
    def from_row(cls, row: dict) -> "EpisodeStats":
        return cls(int(row["global_step"]), int(row["episode"]), int(row["steps_to_goal"]),
                   bool(int(row["success"])), float(row["return"]), row["level"],
                   row["variant"], int(row["lstm"]), int(row["seed"]))


class MetricsSink:
    """Thread-safe append-only collector, optionally mirrored to a CSV file."""

    def __init__(self, path: str | Path | None = None, append: bool = False):
        self.stats: list[EpisodeStats] = []
        self._lock = threading.Lock()
        self._episodes = 0
        self._fh = None
        if path is not None:
            path = Path(path)
            fresh = not (append and path.exists() and path.stat().st_size > 0)
            self._fh = open(path, "a" if append else "w", newline="")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            if fresh:
                self._writer.writerow(CSV_HEADER)

    def next_episode_index(self) -> int:
        with self._lock:
            self._episodes += 1
            return self._episodes - 1

    def append(self, stats: EpisodeStats) -> None:
        with self._lock:
            self.stats.append(stats)
            if self._fh is not None:
                self._writer.writerow(stats.row())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path: str | Path, stats: list[EpisodeStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in stats:
            writer.writerow(s.row())


def read_csv(path: str | Path) -> list[EpisodeStats]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, strict=True)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [EpisodeStats.from_row(row) for row in reader]


def smooth_curve(series, window: int) -> list[float]:
    """Trailing moving average; the first ``window - 1`` points average what is available.

    Window sums use ``math.fsum`` so results are exactly rounded and do not
    depend on summation order.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    x = [float(v) for v in series]
    out = []
    for i in range(len(x)):
        chunk = x[max(0, i - window + 1):i + 1]
        out.append(math.fsum(chunk) / len(chunk))
    return out


def write_smoothed_csv(path: str | Path, stats: list[EpisodeStats], window: int = 25) -> None:
    steps = smooth_curve([s.steps_to_goal for s in stats], window)
    success = smooth_curve([float(s.success) for s in stats], window)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("global_step", "episode", "steps_to_goal_smoothed", "success_smoothed"))
        for s, a, b in zip(stats, steps, success):
            writer.writerow((s.global_step, s.episode_index, repr(a), repr(b)))
