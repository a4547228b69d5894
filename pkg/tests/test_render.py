from __future__ import annotations

import numpy as np
import pytest

from obslearn import neuralnet as nn
from obslearn.gridmap import bundled_map
from obslearn.gridworld import EnvState, ObservationSpec
from obslearn.render import GOAL, LEARNER, TEACHER, WALL, draw, read_ppm, render_episode, write_ppm


def blocks(img, color, scale):
    mask = np.all(img == color, axis=2)
    return mask.sum() / (scale * scale)


def test_frame_geometry_and_colours(level1):
    img = draw(level1, EnvState((3, 2), (3, 3), 0), scale=4)
    assert img.shape == (4 * 7, 4 * 13, 3)
    assert blocks(img, LEARNER, 4) == 1 and blocks(img, TEACHER, 4) == 1 and blocks(img, GOAL, 4) == 1
    assert blocks(img, WALL, 4) == level1.walls.sum()
    assert blocks(img, (0, 0, 0), 4) == (~level1.walls).sum() - 3


def test_ppm_round_trip(tmp_path, level1):
    img = draw(level1, EnvState((3, 2), (3, 3), 4), scale=3)
    write_ppm(tmp_path / "f.ppm", img)
    raw = (tmp_path / "f.ppm").read_bytes()
    assert raw.startswith(b"P6\n39 21\n255\n")
    assert np.array_equal(read_ppm(tmp_path / "f.ppm"), img)


@pytest.fixture(scope="module")
def params(level1):
    spec = ObservationSpec("LAGT")
    return nn.build_network(nn.global_view_specs(8, 4, 16), spec.shape(level1), np.random.default_rng(0))


def test_render_episode(tmp_path, level1, params):
    frames = render_episode(params, level1, ObservationSpec("LAGT"), 3, tmp_path, scale=2)
    assert [f.name for f in frames[:2]] == ["frame_0000.ppm", "frame_0001.ppm"]
    first = read_ppm(frames[0])
    assert first.shape == (14, 26, 3)
    assert blocks(first, LEARNER, 2) == 1 and blocks(first, TEACHER, 2) == 1


def test_masked_episode_has_no_teacher(tmp_path, level1, params):
    frames = render_episode(params, level1, ObservationSpec("LAGT"), 3, tmp_path, scale=1, mask_prob=1.0)
    for f in frames:
        assert blocks(read_ppm(f), TEACHER, 1) == 0


def test_render_shape_mismatch(tmp_path, level1, params):
    with pytest.raises(nn.ShapeMismatch):
        render_episode(params, level1, ObservationSpec("LA"), 0, tmp_path)
