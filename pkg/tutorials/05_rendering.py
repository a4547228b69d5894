"""
Rendering an episode
====================

Write one PPM frame per step. Walls are red, the learner green, the teacher
blue and the goal pink.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from obslearn import neuralnet as nn
from obslearn.a3c import network_specs
from obslearn.gridmap import bundled_map
from obslearn.gridworld import ObservationSpec
from obslearn.render import read_ppm, render_episode

grid = bundled_map("level1")
spec = ObservationSpec("LAGT")
# An untrained network is enough to see the frames; pass a checkpoint to watch a trained agent.
params = nn.build_network(network_specs(spec), spec.shape(grid), np.random.default_rng(0))

out = Path(tempfile.mkdtemp())
frames = render_episode(params, grid, spec, seed=3, out_dir=out, scale=8, greedy=False)
print(f"{len(frames)} frames in {out}; first frame {read_ppm(frames[0]).shape}")
