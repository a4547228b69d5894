"""
Masking curriculum
==================

The teacher is hidden with a probability that rises during training; the
final agent is scored with the teacher always masked. The bundled
``masking`` config runs the full-length version through the CLI.
"""

# %%
import numpy as np

from obslearn.a3c import TrainConfig
from obslearn.curriculum import (DEFAULT_MASK_SCHEDULE, CurriculumPhase, mask_prob_at, random_walk_baseline,
                                 run_curriculum, scale_schedule, zero_shot_eval)
from obslearn.gridmap import bundled_map
from obslearn.gridworld import ObservationSpec

steps = 30_000
schedule = scale_schedule(DEFAULT_MASK_SCHEDULE, steps / 1_000_000)
print([(s, mask_prob_at(schedule, s)) for s in (0, steps // 3, 2 * steps // 3, steps - 1)])

# %%
config = TrainConfig(workers=1, seed=0, learning_rate=2e-3, rmsprop_epsilon=1e-5)
result = run_curriculum([CurriculumPhase("level0", steps, "LAGT", schedule, name="mask")], config, view="local")

# %%
grid = bundled_map("level0")
spec = ObservationSpec("LAGT", "local")
rng = np.random.default_rng(7)
masked = zero_shot_eval(result.params["mask"], grid, spec, 100, rng, mask_prob=1.0)
walk = random_walk_baseline(grid, 100, rng)
print(f"teacher masked: success {masked.success_rate:.2f}, mean steps {masked.mean_steps:.1f}")
print(f"random walk:    success {walk.success_rate:.2f}, mean steps {walk.mean_steps:.1f}")
