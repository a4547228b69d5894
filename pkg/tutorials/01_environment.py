"""
The four-room world and its teacher
===================================

Load a bundled map, watch the teacher walk to the hidden goal, and look at
the one-hot observation the learner receives.
"""

# %%
import numpy as np

from obslearn.gridmap import bundled_map
from obslearn.gridworld import GridWorld, ObservationSpec, World
from obslearn.teacher import TeacherPolicy

grid = bundled_map("level1")
print(grid.to_text())

# %%
# The teacher is a shortest-path planner. Its plan to each corner is as long
# as the BFS distance from its spawn.
teacher = TeacherPolicy(grid)
for goal in grid.goal_candidates:
    print(goal, len(teacher.plan(grid.teacher_spawn, goal)), "moves")

# %%
# A learner that keeps pressing UP sees the teacher reach the goal, then respawn.
world = World.make(grid, ObservationSpec("LAGT"))
env = GridWorld(world, seed=0)
obs = env.reset()
print("observation channels x height x width:", obs.shape)
trail = [env.state.teacher_pos]
for _ in range(20):
    obs, reward, done, info = env.step(0)
    trail.append(env.state.teacher_pos)
print("active goal", grid.goal_candidates[env.state.active_goal])
print("teacher trail", trail)

# %%
# Each variant stacks a different subset of channels: layout, agent, goal, teacher.
for variant in ("LA", "LAT", "LAG", "LAGT"):
    print(variant, ObservationSpec(variant).shape(grid), ObservationSpec(variant, "local").shape(grid))
