from __future__ import annotations

from obslearn.cli import run_command
from obslearn.metrics import CSV_HEADER, read_csv


def write_cfg(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(f"map.name = level0\nenv.variant = LAG\nnet.lstm = 0\nnet.conv_channels = 4\n"
                    f"net.dense_units = 16\ntrain.workers = 1\ntrain.total_steps = 600\n"
                    f"eval.episodes = 5\nrender.scale = 2\noutput.dir = {tmp_path / 'out'}\n{extra}")
    return path


def test_unknown_subcommand(capsys):
    assert run_command(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("nope.key = 1\n")
    assert run_command(["train", str(p)]) == 1
    assert run_command(["train", str(tmp_path / "missing.cfg")]) == 1


def test_runtime_failure_exit_two(tmp_path):
    cfg = write_cfg(tmp_path)
    bogus = tmp_path / "x.ckpt"
    bogus.write_bytes(b"garbage")
    assert run_command(["eval", str(cfg), "--ckpt", str(bogus)]) == 2


def test_train_eval_render(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run_command(["train", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "metrics.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    read_csv(out / "metrics.csv")
    assert (out / "metrics_smoothed.csv").exists() and (out / "config.cfg").exists()
    assert run_command(["eval", str(cfg), "--ckpt", str(out / "model.ckpt")]) == 0
    assert "success" in capsys.readouterr().out
    assert run_command(["render", str(cfg), "--ckpt", str(out / "model.ckpt")]) == 0
    assert (out / "frames" / "frame_0000.ppm").exists()


def test_curriculum_command(tmp_path):
    cfg = write_cfg(tmp_path, "env.view = local\ncurriculum.phases = a, b\nphase.a.level = level0\n"
                              "phase.a.steps = 300\nphase.b.level = level1\nphase.b.steps = 200\n"
                              "phase.b.warm_start = a\n")
    assert run_command(["curriculum", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "a.ckpt").exists() and (out / "b.ckpt").exists()
    assert len(read_csv(out / "metrics.csv")) > 0


def test_verify(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run_command(["verify", str(cfg)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# level0") and all(l.startswith("[PASS]") for l in lines[1:])


def test_gradcheck(capsys):
    assert run_command(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "lstm" in out and "FAIL" not in out
