"""Line-based run configuration: ``section.key = value`` with ``#`` comments.

Every key has a declared type and default; unknown keys are an error.
Curriculum phases are declared with ``curriculum.phases = a, b`` and then
configured through ``phase.<name>.<field>`` keys.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .a3c import TrainConfig
from .curriculum import CurriculumPhase, InvalidSchedule, validate_schedule
from .gridmap import GridMap, resolve_map
from .gridworld import VARIANTS, ObservationSpec

LSTM_SIZES = (0, 32, 64, 128)


class ConfigError(ValueError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, line: int, text: str):
        super().__init__(f"line {line}: cannot parse {text!r}")
        self.line = line


class UnknownKey(ConfigError):
    def __init__(self, key: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown key {key!r}")
        self.key = key


class InvalidValue(ConfigError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key, self.reason = key, reason


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _names(text: str) -> tuple[str, ...]:
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    for n in names:
        if not re.fullmatch(r"[A-Za-z0-9_\-]+", n):
            raise ValueError(f"bad phase name {n!r}")
    return names


def _schedule(text: str) -> tuple[tuple[int, float], ...]:
    """``0:0.25, 250000:0.5`` style step/probability pairs."""
    pairs = []
    for item in text.split(","):
        step, _, prob = item.strip().partition(":")
        if not _:
            raise ValueError(f"expected step:probability, got {item.strip()!r}")
        pairs.append((int(step), float(prob)))
    try:
        return validate_schedule(pairs)
    except InvalidSchedule as exc:
        raise ValueError(str(exc)) from None


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{s}:{p!r}" for s, p in value)
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], str | None] = lambda v: None


def _choice(options):
    return lambda v: None if v in options else f"must be one of {tuple(options)}"


def _at_least(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}"


def _unit(v):
    return None if 0.0 <= v <= 1.0 else "must lie in [0, 1]"


_T = TrainConfig()
SCHEMA: dict[str, Key] = {
    "map.name": Key(str, "level1"),
    "env.variant": Key(str, "LAGT", _choice(VARIANTS)),
    "env.view": Key(str, "global", _choice(("global", "local"))),
    "env.radius": Key(int, 3, _at_least(1)),
    "env.teacher": Key(_bool, True),
    "env.teacher_respawn": Key(_bool, True),
    "env.teacher_noise": Key(float, 0.0, _unit),
    "env.mask_prob": Key(float, 0.0, _unit),
    "net.lstm": Key(int, 0, _at_least(0)),
    "net.lstm_unrestricted": Key(_bool, False),
    "net.conv_channels": Key(int, 16, _at_least(1)),
    "net.dense_units": Key(int, 128, _at_least(1)),
    "train.gamma": Key(float, _T.gamma, _unit),
    "train.segment_length": Key(int, _T.segment_length, _at_least(1)),
    "train.entropy_coef": Key(float, _T.entropy_coef, _at_least(0)),
    "train.value_coef": Key(float, _T.value_coef, _at_least(0)),
    "train.learning_rate": Key(float, _T.learning_rate, _at_least(0)),
    "train.rmsprop_decay": Key(float, _T.rmsprop_decay, _unit),
    "train.rmsprop_epsilon": Key(float, _T.rmsprop_epsilon, _at_least(0)),
    "train.workers": Key(int, _T.workers, _at_least(1)),
    "train.total_steps": Key(int, _T.total_steps, _at_least(0)),
    "train.grad_clip_norm": Key(float, _T.grad_clip_norm, _at_least(0)),
    "train.seed": Key(int, _T.seed),
    "eval.episodes": Key(int, 200, _at_least(1)),
    "eval.greedy": Key(_bool, True),
    "eval.mask_prob": Key(float, 0.0, _unit),
    "eval.teacher": Key(_bool, True),
    "eval.seed": Key(int, 0),
    "verify.gamma": Key(float, 0.99, _unit),
    "render.scale": Key(int, 16, _at_least(1)),
    "render.seed": Key(int, 0),
    "render.mask_prob": Key(float, 0.0, _unit),
    "render.greedy": Key(_bool, True),
    "output.dir": Key(str, "runs/default"),
    "output.smooth_window": Key(int, 25, _at_least(1)),
    "curriculum.phases": Key(_names, ()),
}

PHASE_SCHEMA: dict[str, Key] = {
    "level": Key(str, "level1"),
    "steps": Key(int, 200_000, _at_least(1)),
    "variant": Key(str, "LAGT", _choice(VARIANTS)),
    "mask_schedule": Key(_schedule, ((0, 0.0),)),
    "warm_start": Key(str, ""),
    "teacher": Key(_bool, True),
}

_LINE = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=\s*(.*?)\s*$")


def _lookup(key: str) -> Key | None:
    if key in SCHEMA:
        return SCHEMA[key]
    parts = key.split(".")
    if len(parts) == 3 and parts[0] == "phase":
        return PHASE_SCHEMA.get(parts[2])
    return None


@dataclass
class RunConfig:
    """Validated settings; ``explicit`` holds the keys the document set."""

    values: dict[str, Any]
    explicit: set[str] = field(default_factory=set)
    source: str | None = None

    def __getitem__(self, key: str) -> Any:
        if key in self.values:
            return self.values[key]
        spec = _lookup(key)
        if spec is None:
            raise UnknownKey(key)
        return spec.default

    def provenance(self, key: str) -> str:
        self[key]
        return "explicit" if key in self.explicit else "default"

    def grid(self) -> GridMap:
        return resolve_map(self["map.name"])

    def observation_spec(self) -> ObservationSpec:
        return ObservationSpec(self["env.variant"], self["env.view"], self["env.radius"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k.split(".", 1)[1]: self[k] for k in SCHEMA if k.startswith("train.")})

    def phases(self) -> list[CurriculumPhase]:
        out = []
        for name in self["curriculum.phases"]:
            p = lambda f: self[f"phase.{name}.{f}"]  # noqa: E731
            out.append(CurriculumPhase(p("level"), p("steps"), p("variant"), p("mask_schedule"),
                                       p("warm_start") or None, name, p("teacher")))
        return out

    def output_dir(self) -> Path:
        return Path(self["output.dir"])


def _validate(cfg: RunConfig) -> None:
    lstm = cfg["net.lstm"]
    if lstm not in LSTM_SIZES and not cfg["net.lstm_unrestricted"]:
        raise InvalidValue("net.lstm", f"must be one of {LSTM_SIZES} unless net.lstm_unrestricted = true")
    names = cfg["curriculum.phases"]
    for key in cfg.values:
        if key.startswith("phase.") and key.split(".")[1] not in names:
            raise InvalidValue(key, f"phase {key.split('.')[1]!r} is not listed in curriculum.phases")
    seen: list[str] = []
    for name in names:
        warm = cfg[f"phase.{name}.warm_start"]
        if warm and warm not in seen:
            raise InvalidValue(f"phase.{name}.warm_start", f"{warm!r} is not an earlier phase")
        seen.append(name)


def parse_config(document: str, source: str | None = None) -> RunConfig:
    cfg = RunConfig({}, set(), source)
    for lineno, raw in enumerate(document.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigSyntaxError(lineno, raw)
        key, text = m.groups()
        spec = _lookup(key)
        if spec is None:
            raise UnknownKey(key, lineno)
        if key in cfg.explicit:
            raise ConfigSyntaxError(lineno, f"duplicate key {key}")
        try:
            value = spec.parse(text)
        except ValueError as exc:
            raise InvalidValue(key, str(exc)) from None
        problem = spec.check(value)
        if problem:
            raise InvalidValue(key, problem)
        cfg.values[key] = value
        cfg.explicit.add(key)
    _validate(cfg)
    return cfg


def serialize_config(cfg: RunConfig, include_defaults: bool = False) -> str:
    keys = sorted(cfg.explicit)
    if include_defaults:
        keys = sorted(set(keys) | set(SCHEMA))
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in keys)


def load_config(path: str | Path) -> RunConfig:
    """Read a config file; bare names like ``level1.cfg`` fall back to the bundled set."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("obslearn.configs").joinpath(p.name)
        if p.parent == Path(".") and bundled.is_file():
            return parse_config(bundled.read_text(), str(p.name))
        raise FileNotFoundError(path)
    return parse_config(p.read_text(), str(p))


def bundled_configs() -> list[str]:
    return sorted(f.name for f in resources.files("obslearn.configs").iterdir() if f.name.endswith(".cfg"))
