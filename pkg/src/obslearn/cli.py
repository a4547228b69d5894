"""``obslearn`` command line: train, curriculum, eval, verify, render, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .a3c import train
from .config import ConfigError, RunConfig, load_config, serialize_config
from .curriculum import run_curriculum, zero_shot_eval
from .gridmap import MapError
from .metrics import write_csv, write_smoothed_csv
from .oracle import format_report, verify_all
from .render import render_episode

log = logging.getLogger("obslearn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="obslearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("train", "train one agent"), ("curriculum", "train a sequence of phases"),
                       ("verify", "run the exact tabular oracle"), ("eval", "evaluate a checkpoint"),
                       ("render", "write PPM frames of one episode")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="config file, or the name of a bundled config")
        if name in ("eval", "render"):
            p.add_argument("--ckpt", required=True, help="checkpoint path")
        if name != "verify":
            p.add_argument("--out", help="override output.dir")
    g = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    g.add_argument("--seeds", type=int, default=10)
    g.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    res = train(cfg.train_config(), cfg.grid(), cfg.observation_spec(), cfg["env.mask_prob"],
                lstm=cfg["net.lstm"], with_teacher=cfg["env.teacher"],
                conv_channels=cfg["net.conv_channels"], dense_units=cfg["net.dense_units"])
    write_csv(out / "metrics.csv", res.stats)
    write_smoothed_csv(out / "metrics_smoothed.csv", res.stats, cfg["output.smooth_window"])
    nn.save_checkpoint(out / "model.ckpt", res.params)
    (out / "config.cfg").write_text(serialize_config(cfg, include_defaults=True))
    tail = res.stats[-max(1, len(res.stats) // 5):]
    mean = np.mean([s.steps_to_goal for s in tail]) if res.stats else float("nan")
    print(f"trained {res.global_step} steps, {len(res.stats)} episodes, "
          f"final mean steps-to-goal {mean:.2f}; wrote {out}")
    return 0


def cmd_curriculum(cfg: RunConfig, args) -> int:
    phases = cfg.phases()
    if not phases:
        raise ConfigError("curriculum.phases is empty")
    out = _out_dir(cfg, args)
    res = run_curriculum(phases, cfg.train_config(), view=cfg["env.view"], radius=cfg["env.radius"],
                         lstm=cfg["net.lstm"], conv_channels=cfg["net.conv_channels"],
                         dense_units=cfg["net.dense_units"], run_dir=out, metrics_path=out / "metrics.csv")
    write_smoothed_csv(out / "metrics_smoothed.csv", res.stats, cfg["output.smooth_window"])
    (out / "config.cfg").write_text(serialize_config(cfg, include_defaults=True))
    for name, path in res.checkpoints.items():
        print(f"phase {name}: {path}")
    print(f"total steps {res.total_steps}")
    return 0


def _spec_for(cfg: RunConfig, params: nn.NetworkParams):
    spec = cfg.observation_spec()
    grid = cfg.grid()
    if spec.view == "global" and tuple(params.input_shape[1:]) != grid.shape:
        # Curriculum checkpoints are trained on a padded canvas.
        spec = replace(spec, canvas=tuple(params.input_shape[1:]))
    return grid, spec


def cmd_eval(cfg: RunConfig, args) -> int:
    params = nn.load_checkpoint(args.ckpt)
    grid, spec = _spec_for(cfg, params)
    rng = np.random.default_rng(cfg["eval.seed"])
    s = zero_shot_eval(params, grid, spec, cfg["eval.episodes"], rng, with_teacher=cfg["eval.teacher"],
                       greedy=cfg["eval.greedy"], mask_prob=cfg["eval.mask_prob"])
    print(f"{grid.name}: {s.episodes} episodes, success {s.success_rate:.3f}, mean steps {s.mean_steps:.2f}")
    return 0


def cmd_render(cfg: RunConfig, args) -> int:
    params = nn.load_checkpoint(args.ckpt)
    grid, spec = _spec_for(cfg, params)
    frames = render_episode(params, grid, spec, cfg["render.seed"], _out_dir(cfg, args) / "frames",
                            scale=cfg["render.scale"], mask_prob=cfg["render.mask_prob"],
                            with_teacher=cfg["env.teacher"], greedy=cfg["render.greedy"])
    print(f"wrote {len(frames)} frames to {frames[0].parent}")
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    grid = cfg.grid()
    claims = verify_all(grid, cfg["verify.gamma"])
    print(format_report(grid, claims))
    return 0 if all(c.passed for c in claims) else 2


def cmd_gradcheck(args) -> int:
    reports = nn.gradcheck_suite(range(args.seeds), args.tolerance)
    ok = True
    for name, runs in reports.items():
        layers: dict[str, float] = {}
        for r in runs:
            for k, v in r.per_layer.items():
                layers[k] = max(layers.get(k, 0.0), float(v))
        passed = all(r.passed for r in runs)
        ok &= passed
        detail = " ".join(f"{k}={v:.2e}" for k, v in layers.items())
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return 0 if ok else 2


COMMANDS = {"train": cmd_train, "curriculum": cmd_curriculum, "eval": cmd_eval,
            "render": cmd_render, "verify": cmd_verify}


def run_command(argv: list[str]) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    cfg = None
    if args.command != "gradcheck":
        try:
            cfg = load_config(args.config)
        except (ConfigError, FileNotFoundError, MapError) as exc:
            print(f"obslearn: {exc}", file=sys.stderr)
            return 1
    try:
        if cfg is None:
            return cmd_gradcheck(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, MapError) as exc:
        print(f"obslearn: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"obslearn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
