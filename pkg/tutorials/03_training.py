"""
Training an agent with A3C
==========================

A short single-worker run on the one-room level. Longer runs on ``level1``
go through the CLI (``obslearn train level1_lagt``).
"""

# %%
import numpy as np

from obslearn.a3c import TrainConfig, evaluate, train
from obslearn.gridmap import bundled_map
from obslearn.gridworld import ObservationSpec, World
from obslearn.metrics import smooth_curve

grid = bundled_map("level0")
spec = ObservationSpec("LAGT")
config = TrainConfig(workers=1, total_steps=40_000, seed=0, learning_rate=2e-3, rmsprop_epsilon=1e-5)
result = train(config, grid, spec)

# %%
curve = smooth_curve([s.steps_to_goal for s in result.stats], 25)
print(f"{len(result.stats)} episodes; smoothed steps-to-goal {curve[0]:.1f} -> {curve[-1]:.1f}")

# %%
world = World.make(grid, spec)
for greedy in (True, False):
    summary = evaluate(result.params, world, 100, np.random.default_rng(1), greedy=greedy)
    print(f"{'greedy ' if greedy else 'sampled'} success {summary.success_rate:.2f}, mean steps {summary.mean_steps:.1f}")
