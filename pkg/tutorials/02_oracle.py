"""
What the teacher is worth, exactly
==================================

The tabular oracle solves the tasks in closed form: a blind learner is stuck
with the goal-averaged policy, while a learner that sees the teacher can do as
well as one that sees the goal.
"""

# %%
import numpy as np

from obslearn.gridmap import bundled_map, diameter
from obslearn.oracle import (evaluate_context_switch_policy, evaluate_imitation_policy, format_report,
                             per_goal_optimal_values, stationary_value, verify_all, verify_value_inequality)

grid = bundled_map("level1")
gamma = 0.99

# %%
report = verify_value_inequality(grid, gamma)
print(f"blind learner     {report.v_marginal_start:.6f}")
print(f"teacher observed  {report.v_augmented_start:.6f}")

# %%
# Simple teacher-driven policies sit between the two.
print(f"stationary        {stationary_value(grid, gamma):.6f}")
print(f"imitation         {evaluate_imitation_policy(grid, gamma):.6f}")
for k in (0, 2, 4, diameter(grid)):
    print(f"context after {k:2d}  {evaluate_context_switch_policy(grid, gamma, k):.6f}")
print(f"goal visible      {np.mean(per_goal_optimal_values(grid, gamma)):.6f}")

# %%
print(format_report(grid, verify_all(grid, gamma)))
