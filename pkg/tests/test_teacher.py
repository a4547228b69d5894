from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from obslearn.gridmap import Action, GridMap, load_map, move
from obslearn.gridworld import EnvState
from obslearn.teacher import Disconnected, TeacherPolicy, plan, teacher_action


def flood_distances(grid: GridMap, source):
    """Independent oracle: BFS on the raw wall array without the planner's move function."""
    h, w = grid.walls.shape
    dist = {source: 0}
    todo = deque([source])
    while todo:
        r, c = todo.popleft()
        for n in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= n[0] < h and 0 <= n[1] < w and not grid.walls[n] and n not in dist:
                dist[n] = dist[(r, c)] + 1
                todo.append(n)
    return dist


def walk(grid, start, actions):
    pos = start
    for a in actions:
        pos = move(grid, pos, a)
    return pos


def test_plan_is_shortest_everywhere(any_map):
    for goal in any_map.goal_candidates:
        dist = flood_distances(any_map, goal)
        for cell in any_map.floor_cells():
            path = plan(any_map, cell, goal)
            assert len(path) == dist[cell]
            assert walk(any_map, cell, path) == goal


def test_trivial_plans():
    corridor = load_map("#######\n#ST..G#\n#######")
    assert plan(corridor, (1, 5), (1, 5)) == []
    assert plan(corridor, (1, 2), (1, 5)) == [Action.RIGHT] * 3


def test_tie_break_prefers_action_order(level1):
    # From (3,3) to (1,5) every path takes two UPs and two RIGHTs; BFS expands UP first.
    path = plan(level1, (3, 3), (1, 5))
    assert len(path) == 4 and path[0] == Action.UP


def test_deterministic(level1):
    assert plan(level1, (5, 1), (1, 11)) == plan(level1, (5, 1), (1, 11))


def test_disconnected_raises(level1):
    with pytest.raises(Disconnected):
        plan(level1, (0, 0), (1, 1))


def test_one_left_of_goal_moves_right(level1):
    policy = TeacherPolicy(level1)
    goal = (1, 5)
    state = EnvState((3, 2), (1, 4), level1.goal_candidates.index(goal),
                     teacher_plan=policy.plan((1, 4), goal), teacher_plan_cursor=0)
    assert teacher_action(policy, state) == Action.RIGHT


def test_respawn_after_goal(level1):
    policy = TeacherPolicy(level1)
    goal = level1.goal_candidates[0]
    pos, path, cur = policy.initial(goal)
    for _ in range(len(path)):
        pos, path, cur = policy.advance(pos, path, cur, goal)
    assert pos == goal
    pos, path, cur = policy.advance(pos, path, cur, goal)
    assert pos == level1.teacher_spawn and cur == 0


def test_no_respawn_idles(level1):
    policy = TeacherPolicy(level1, respawn=False)
    goal = level1.goal_candidates[3]
    pos, path, cur = policy.initial(goal)
    for _ in range(len(path) + 20):
        pos, path, cur = policy.advance(pos, path, cur, goal)
    assert pos == goal
    state = EnvState((3, 2), pos, 3, teacher_plan=path, teacher_plan_cursor=cur)
    assert teacher_action(policy, state) is None


def test_reaches_goal_within_diameter(any_map):
    from obslearn.gridmap import diameter

    policy = TeacherPolicy(any_map)
    d = diameter(any_map)
    for goal in any_map.goal_candidates:
        assert len(policy.plan(any_map.teacher_spawn, goal)) <= d


def test_noise_replans_and_still_reaches_goal(level1):
    policy = TeacherPolicy(level1, respawn=False, noise=0.3)
    rng = np.random.default_rng(0)
    goal = level1.goal_candidates[5]
    pos, path, cur = policy.initial(goal)
    for _ in range(500):
        pos, path, cur = policy.advance(pos, path, cur, goal, rng)
        if pos == goal:
            break
    assert pos == goal
