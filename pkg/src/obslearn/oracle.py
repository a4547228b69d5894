"""Exact tabular analysis of the learner's decision problem with and without a teacher.

Three families of MDPs are built over the same deterministic grid dynamics:

* ``M_t``: one per goal candidate ``t``; learner position only, absorbing at
  goal ``t``.
* ``M`` (marginal): learner position only, reward averaged over the goal
  family and the movement kernel shared by all ``M_t``. Its greedy policy
  is the best a blind, memoryless learner can commit to.
* ``M~`` (augmented): state ``(learner cell, teacher cell, plan cursor,
  goal)``. The teacher's plan cursor is what makes the teacher part Markov,
  and the goal is the teacher's private task identity.

All values are infinite-horizon discounted with absorbing goals; the
simulator's 100-step cap is not modelled.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .gridmap import ACTIONS, Coord, GridMap, diameter, move
from .gridworld import EnvState, World, transition
from .teacher import TeacherPolicy, plan

SLACK = 1e-9


class TooLarge(ValueError):
    pass


class NonConvergent(RuntimeError):
    pass


@dataclass
class TabularMDP:
    states: list[Hashable]
    transition: list[sp.csr_matrix]  # one (S, S) matrix per action
    reward: np.ndarray  # (S, A)
    gamma: float
    terminal: np.ndarray  # (S,) bool
    actions: tuple = ACTIONS

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def validate(self, atol: float = 1e-12) -> None:
        n = self.n_states
        for a, p in enumerate(self.transition):
            if p.shape != (n, n):
                raise ValueError(f"action {a}: kernel shape {p.shape}, expected {(n, n)}")
            rows = np.asarray(p.sum(axis=1)).ravel()
            if np.max(np.abs(rows - 1.0)) > atol:
                raise ValueError(f"action {a}: transition rows do not sum to 1")
            term = np.flatnonzero(self.terminal)
            if term.size and np.any(p[term, term] != 1.0):
                raise ValueError("terminal states must self-loop")
        if np.any(self.reward[self.terminal] != 0.0):
            raise ValueError("terminal states must have zero reward")


def _deterministic_kernel(next_index: np.ndarray, n: int) -> sp.csr_matrix:
    return sp.csr_matrix((np.ones(n), (np.arange(n), next_index)), shape=(n, n))


def _check_size(grid: GridMap, max_cells: int) -> None:
    if len(grid.floor_cells()) > max_cells:
        raise TooLarge(f"{grid.name}: {len(grid.floor_cells())} floor cells exceeds {max_cells}")


# -- learner-only MDPs --------------------------------------------------------------


def goal_reward(grid: GridMap, goals: Sequence[int]) -> np.ndarray:
    """``R(s, a)`` averaged over ``goals``: the fraction whose cell ``a`` steps onto."""
    cells = grid.floor_cells()
    targets = [grid.goal_candidates[g] for g in goals]
    r = np.zeros((len(cells), len(ACTIONS)))
    for i, c in enumerate(cells):
        for a in ACTIONS:
            nxt = move(grid, c, a)
            r[i, a] = sum(nxt == g for g in targets) / len(targets)
    return r


def build_goal_mdp(grid: GridMap, goal: int, gamma: float = 0.99, max_cells: int = 200) -> TabularMDP:
    """Task MDP ``M_t``: reaching goal ``t`` pays 1 and absorbs."""
    _check_size(grid, max_cells)
    cells = list(grid.floor_cells())
    idx = {c: i for i, c in enumerate(cells)}
    target = grid.goal_candidates[goal]
    terminal = np.array([c == target for c in cells])
    kernels = []
    for a in ACTIONS:
        nxt = np.array([i if terminal[i] else idx[move(grid, c, a)] for i, c in enumerate(cells)])
        kernels.append(_deterministic_kernel(nxt, len(cells)))
    reward = goal_reward(grid, [goal])
    reward[terminal] = 0.0
    return TabularMDP(cells, kernels, reward, gamma, terminal)


def build_marginal_mdp(grid: GridMap, gamma: float = 0.99, goals: Sequence[int] | None = None,
                       max_cells: int = 200) -> TabularMDP:
    """Shared dynamics, reward averaged over the goal family (or the subset ``goals``).

    No state is absorbing here: the per-goal termination is exactly what the
    averaged model cannot express, so values of this MDP are only used to pick
    a policy, which is then scored in the true task MDPs.
    """
    _check_size(grid, max_cells)
    goals = list(range(len(grid.goal_candidates))) if goals is None else list(goals)
    cells = list(grid.floor_cells())
    idx = {c: i for i, c in enumerate(cells)}
    kernels = [_deterministic_kernel(np.array([idx[move(grid, c, a)] for c in cells]), len(cells))
               for a in ACTIONS]
    return TabularMDP(cells, kernels, goal_reward(grid, goals), gamma, np.zeros(len(cells), bool))


# -- augmented MDP ------------------------------------------------------------------


class AugmentedState(NamedTuple):
    learner_pos: Coord
    teacher_pos: Coord
    teacher_cursor: int
    goal: int

    @property
    def controllable(self) -> Coord:
        return self.learner_pos

    @property
    def non_controllable(self) -> tuple[Coord, int, int]:
        return (self.teacher_pos, self.teacher_cursor, self.goal)


def teacher_phases(teacher: TeacherPolicy, goal: int) -> list[tuple[Coord, int]]:
    """Every ``(position, cursor)`` the teacher visits for ``goal``, in visiting order."""
    if teacher.noise:
        raise ValueError("the tabular oracle needs a noise-free teacher")
    cell = teacher.grid.goal_candidates[goal]
    pos, path, cursor = teacher.initial(cell)
    seen = []
    while (pos, cursor) not in seen:
        seen.append((pos, cursor))
        pos, path, cursor = teacher.advance(pos, path, cursor, cell)
    return seen


@dataclass
class AugmentedMDP:
    mdp: TabularMDP
    start: list[int]  # start state index per goal (uniform start distribution)
    teacher: TeacherPolicy


def build_augmented_mdp(grid: GridMap, teacher: TeacherPolicy | None = None, gamma: float = 0.99,
                        max_cells: int = 200) -> AugmentedMDP:
    """Enumerate the learner+teacher MDP by stepping the simulator from every state."""
    _check_size(grid, max_cells)
    teacher = teacher or TeacherPolicy(grid)
    world = World(grid, teacher=teacher, max_steps=None)
    cells = grid.floor_cells()
    states: list[AugmentedState] = []
    plans = {}
    for t in range(len(grid.goal_candidates)):
        plans[t] = teacher.plan(grid.teacher_spawn, grid.goal_candidates[t])
        for tpos, cursor in teacher_phases(teacher, t):
            states.extend(AugmentedState(c, tpos, cursor, t) for c in cells)
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    terminal = np.array([s.learner_pos == grid.goal_candidates[s.goal] for s in states])
    reward = np.zeros((n, len(ACTIONS)))
    kernels = []
    for a in ACTIONS:
        nxt = np.empty(n, dtype=np.int64)
        for i, s in enumerate(states):
            if terminal[i]:
                nxt[i] = i
                continue
            env_state = EnvState(s.learner_pos, s.teacher_pos, s.goal, teacher_plan=plans[s.goal],
                                 teacher_plan_cursor=s.teacher_cursor)
            ns, r, _ = transition(world, env_state, a)
            nxt[i] = index[AugmentedState(ns.learner_pos, ns.teacher_pos, ns.teacher_plan_cursor, s.goal)]
            reward[i, a] = r
        kernels.append(_deterministic_kernel(nxt, n))
    starts = []
    for t in range(len(grid.goal_candidates)):
        tpos, cursor = teacher_phases(teacher, t)[0]
        starts.append(index[AugmentedState(grid.learner_spawn, tpos, cursor, t)])
    return AugmentedMDP(TabularMDP(states, kernels, reward, gamma, terminal), starts, teacher)


# -- solvers ------------------------------------------------------------------------


@dataclass
class VIResult:
    values: np.ndarray
    policy: np.ndarray
    residuals: list[float]

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def q_values(mdp: TabularMDP, values: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.gamma * np.column_stack([p @ values for p in mdp.transition])


def greedy_policy(mdp: TabularMDP, values: np.ndarray, tie_tol: float = 1e-10) -> np.ndarray:
    """Argmax of Q with ties (within ``tie_tol``) resolved in action order."""
    q = q_values(mdp, values)
    best = q.max(axis=1, keepdims=True)
    scale = np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - tie_tol * scale, axis=1)


def value_iteration(mdp: TabularMDP, tolerance: float = 1e-12, max_iter: int = 200_000) -> VIResult:
    """Synchronous Bellman optimality sweeps until the max-norm residual drops below ``tolerance``."""
    v = np.zeros(mdp.n_states)
    residuals: list[float] = []
    for _ in range(max_iter):
        nv = q_values(mdp, v).max(axis=1)
        nv[mdp.terminal] = 0.0
        res = float(np.max(np.abs(nv - v))) if v.size else 0.0
        if len(residuals) > 1 and res > residuals[-1] * (1 + 1e-9) + 1e-15:
            raise NonConvergent(f"residual increased from {residuals[-1]} to {res}")
        residuals.append(res)
        v = nv
        if res < tolerance:
            return VIResult(v, greedy_policy(mdp, v), residuals)
    raise NonConvergent(f"no convergence after {max_iter} sweeps (residual {residuals[-1]})")


def policy_evaluation(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Exact value of a deterministic policy (terminal states are worth 0)."""
    n = mdp.n_states
    rows = np.arange(n)
    p_pi = sp.csr_matrix((n, n))
    for a, p in enumerate(mdp.transition):
        mask = sp.diags((policy == a).astype(float))
        p_pi = p_pi + mask @ p
    r_pi = mdp.reward[rows, policy]
    live = np.flatnonzero(~mdp.terminal)
    v = np.zeros(n)
    if live.size:
        sub = p_pi.tocsr()[live][:, live]
        a_mat = sp.identity(live.size, format="csc") - mdp.gamma * sub.tocsc()
        v[live] = np.atleast_1d(spsolve(a_mat, r_pi[live]))
    return v


# -- policies and claims ------------------------------------------------------------


def _start(grid: GridMap, mdp: TabularMDP) -> int:
    return mdp.index[grid.learner_spawn]


def per_goal_optimal_values(grid: GridMap, gamma: float = 0.99) -> np.ndarray:
    """``V*_{M_t}(start)`` for every goal ``t``."""
    out = []
    for t in range(len(grid.goal_candidates)):
        m = build_goal_mdp(grid, t, gamma)
        out.append(value_iteration(m).values[_start(grid, m)])
    return np.array(out)


def blind_policy(grid: GridMap, gamma: float = 0.99, goals: Sequence[int] | None = None) -> np.ndarray:
    """Greedy policy of the marginal MDP over ``goals``: a map from learner cell to action."""
    return value_iteration(build_marginal_mdp(grid, gamma, goals)).policy


def evaluate_blind_policy(grid: GridMap, policy: np.ndarray, gamma: float = 0.99,
                          goals: Sequence[int] | None = None) -> np.ndarray:
    """Value at spawn of a learner-cell policy in each task MDP ``M_t``."""
    goals = range(len(grid.goal_candidates)) if goals is None else goals
    out = []
    for t in goals:
        m = build_goal_mdp(grid, t, gamma)
        out.append(policy_evaluation(m, policy)[_start(grid, m)])
    return np.array(out)


def stationary_value(grid: GridMap, gamma: float = 0.99) -> float:
    """Expected task value of the marginal MDP's greedy policy (no teacher, goal occluded)."""
    return float(np.mean(evaluate_blind_policy(grid, blind_policy(grid, gamma), gamma)))


def augmented_optimal_value(grid: GridMap, gamma: float = 0.99,
                            teacher: TeacherPolicy | None = None) -> tuple[float, AugmentedMDP, VIResult]:
    aug = build_augmented_mdp(grid, teacher, gamma)
    vi = value_iteration(aug.mdp)
    return float(np.mean(vi.values[aug.start])), aug, vi


@dataclass
class InequalityReport:
    v_marginal_start: float
    v_augmented_start: float
    holds: bool
    gap: float


def verify_value_inequality(grid: GridMap, gamma: float = 0.99, goal_visible: bool = False,
                            teacher: TeacherPolicy | None = None) -> InequalityReport:
    """Compare the teacher-augmented optimum with the best teacher-free learner.

    With ``goal_visible`` the teacher-free learner may condition on the goal,
    so it plays each task optimally and the teacher has nothing to add.
    """
    v_aug, _, _ = augmented_optimal_value(grid, gamma, teacher)
    if goal_visible:
        v_marg = float(np.mean(per_goal_optimal_values(grid, gamma)))
    else:
        v_marg = stationary_value(grid, gamma)
    gap = v_aug - v_marg
    return InequalityReport(v_marg, v_aug, bool(v_aug >= v_marg - SLACK), gap)


def imitation_policy(aug: AugmentedMDP) -> np.ndarray:
    """Follow the teacher one step behind: step along a shortest path to its current cell.

    When both agents share a cell the learner copies the teacher's next planned
    move, i.e. reads the expert action off the teacher state.
    """
    mdp, teacher = aug.mdp, aug.teacher
    grid = teacher.grid
    pol = np.zeros(mdp.n_states, dtype=np.int64)
    for i, s in enumerate(mdp.states):
        if mdp.terminal[i]:
            continue
        if s.learner_pos != s.teacher_pos:
            pol[i] = plan(grid, s.learner_pos, s.teacher_pos)[0]
        else:
            path = teacher.plan(grid.teacher_spawn, grid.goal_candidates[s.goal])
            pol[i] = path[s.teacher_cursor] if s.teacher_cursor < len(path) else ACTIONS[0]
    return pol


def evaluate_imitation_policy(grid: GridMap, gamma: float = 0.99, teacher: TeacherPolicy | None = None,
                              aug: AugmentedMDP | None = None) -> float:
    aug = aug or build_augmented_mdp(grid, teacher, gamma)
    v = policy_evaluation(aug.mdp, imitation_policy(aug))
    return float(np.mean(v[aug.start]))


def teacher_prefix(teacher: TeacherPolicy, goal: int, k: int) -> tuple[Coord, ...]:
    """Teacher cells over its first ``k`` steps (``k + 1`` cells including the spawn)."""
    cell = teacher.grid.goal_candidates[goal]
    pos, path, cursor = teacher.initial(cell)
    out = [pos]
    for _ in range(k):
        pos, path, cursor = teacher.advance(pos, path, cursor, cell)
        out.append(pos)
    return tuple(out)


def context_groups(grid: GridMap, teacher: TeacherPolicy, k: int) -> list[list[int]]:
    """Partition goals into sets the first ``k`` teacher steps cannot tell apart."""
    groups: dict[tuple, list[int]] = {}
    for t in range(len(grid.goal_candidates)):
        groups.setdefault(teacher_prefix(teacher, t, k), []).append(t)
    return list(groups.values())


def evaluate_context_switch_policy(grid: GridMap, gamma: float = 0.99, teacher_steps: int | None = None,
                                   teacher: TeacherPolicy | None = None) -> float:
    """Value of switching between task policies given an inferred context.

    ``teacher_steps=None`` hands the learner the true task. Otherwise the
    context is the set of goals consistent with the teacher's first
    ``teacher_steps`` moves, and the learner plays the greedy marginal policy
    over that set (the task-optimal policy once the set is a single goal).
    """
    n_goals = len(grid.goal_candidates)
    if teacher_steps is None:
        groups = [[t] for t in range(n_goals)]
    else:
        groups = context_groups(grid, teacher or TeacherPolicy(grid), teacher_steps)
    values = np.zeros(n_goals)
    for group in groups:
        if len(group) == 1:
            m = build_goal_mdp(grid, group[0], gamma)
            values[group[0]] = value_iteration(m).values[_start(grid, m)]
        else:
            pol = blind_policy(grid, gamma, group)
            values[group] = evaluate_blind_policy(grid, pol, gamma, group)
    return float(values.mean())


# -- factorisation ------------------------------------------------------------------


@dataclass
class FactorizationReport:
    rows_checked: int
    max_abs_error: float
    marginal_max_abs_error: float

    @property
    def holds(self) -> bool:
        return self.max_abs_error == 0.0 and self.marginal_max_abs_error == 0.0


def learner_kernel(grid: GridMap) -> dict[tuple[Coord, int], dict[Coord, float]]:
    return {(c, a): {move(grid, c, a): 1.0} for c in grid.floor_cells() for a in ACTIONS}


def teacher_kernel(teacher: TeacherPolicy, goal: int) -> dict[tuple[Coord, int], dict[tuple[Coord, int], float]]:
    """Teacher phase transitions for ``goal``, rebuilt from the plan alone."""
    grid = teacher.grid
    path = plan(grid, grid.teacher_spawn, grid.goal_candidates[goal])
    cells = [grid.teacher_spawn]
    for a in path:
        cells.append(move(grid, cells[-1], a))
    kernel = {}
    for k, pos in enumerate(cells):
        if k < len(path):
            kernel[(pos, k)] = {(cells[k + 1], k + 1): 1.0}
        elif teacher.respawn:
            kernel[(pos, k)] = {(cells[0], 0): 1.0}
        else:
            kernel[(pos, k)] = {(pos, k): 1.0}
    return kernel


def check_factorization(aug: AugmentedMDP) -> FactorizationReport:
    """Entrywise ``P~((c', e') | (c, e), a) == P(c' | c, a) * P_e(e' | e)`` on live rows."""
    mdp, teacher = aug.mdp, aug.teacher
    grid = teacher.grid
    pc = learner_kernel(grid)
    pe = {t: teacher_kernel(teacher, t) for t in range(len(grid.goal_candidates))}
    worst = 0.0
    worst_marg = 0.0
    rows = 0
    for a, p in enumerate(mdp.transition):
        p = p.tocsr()
        for i, s in enumerate(mdp.states):
            if mdp.terminal[i]:
                continue
            lo, hi = p.indptr[i], p.indptr[i + 1]
            actual = {mdp.states[j]: v for j, v in zip(p.indices[lo:hi], p.data[lo:hi])}
            expected = {}
            for c2, w1 in pc[(s.learner_pos, a)].items():
                for (e_pos, e_cur), w2 in pe[s.goal][(s.teacher_pos, s.teacher_cursor)].items():
                    expected[AugmentedState(c2, e_pos, e_cur, s.goal)] = w1 * w2
            for key in set(actual) | set(expected):
                worst = max(worst, abs(actual.get(key, 0.0) - expected.get(key, 0.0)))
            marg: dict[Coord, float] = {}
            for key, v in actual.items():
                marg[key.learner_pos] = marg.get(key.learner_pos, 0.0) + v
            for c2 in set(marg) | set(pc[(s.learner_pos, a)]):
                worst_marg = max(worst_marg, abs(marg.get(c2, 0.0) - pc[(s.learner_pos, a)].get(c2, 0.0)))
            rows += 1
    return FactorizationReport(rows, worst, worst_marg)


# -- the full report ----------------------------------------------------------------


@dataclass
class Claim:
    name: str
    passed: bool
    values: dict[str, float]

    def line(self) -> str:
        vals = " ".join(f"{k}={v:.12g}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {vals}"


def verify_all(grid: GridMap, gamma: float = 0.99) -> list[Claim]:
    """Every tabular claim on one map, one :class:`Claim` each."""
    teacher = TeacherPolicy(grid)
    n_goals = len(grid.goal_candidates)
    v_stat = stationary_value(grid, gamma)
    per_goal = per_goal_optimal_values(grid, gamma)
    ceiling = float(per_goal.mean())
    v_aug, aug, vi = augmented_optimal_value(grid, gamma, teacher)
    v_imit = evaluate_imitation_policy(grid, gamma, aug=aug)
    v_ctx_true = evaluate_context_switch_policy(grid, gamma, None, teacher)
    v_ctx_none = evaluate_context_switch_policy(grid, gamma, 0, teacher)
    k = diameter(grid)
    v_ctx_diam = evaluate_context_switch_policy(grid, gamma, k, teacher)
    fact = check_factorization(aug)

    # Optimal augmented values must not depend on the teacher coordinates.
    goal_vi = {t: value_iteration(build_goal_mdp(grid, t, gamma)) for t in range(n_goals)}
    cells_index = {c: i for i, c in enumerate(grid.floor_cells())}
    indep = max(abs(vi.values[i] - goal_vi[s.goal].values[cells_index[s.learner_pos]])
                for i, s in enumerate(aug.mdp.states))

    claims = [
        Claim("value inequality (goal occluded)", v_aug >= v_stat - SLACK and
              (n_goals == 1 or v_aug - v_stat > SLACK),
              {"V_stationary": v_stat, "V_augmented": v_aug, "gap": v_aug - v_stat}),
        Claim("sandwich stationary <= imitation <= ceiling",
              v_stat <= v_imit + SLACK and v_imit <= ceiling + SLACK,
              {"V_stationary": v_stat, "V_imitation": v_imit, "V_ceiling": ceiling}),
        Claim("sandwich stationary <= augmented <= ceiling",
              v_stat <= v_aug + SLACK and v_aug <= ceiling + SLACK,
              {"V_stationary": v_stat, "V_augmented": v_aug, "V_ceiling": ceiling}),
        Claim("context switch with true task equals ceiling", abs(v_ctx_true - ceiling) <= SLACK,
              {"V_context_true": v_ctx_true, "V_ceiling": ceiling}),
        Claim("context switch with no teacher steps equals stationary", abs(v_ctx_none - v_stat) <= SLACK,
              {"V_context_0": v_ctx_none, "V_stationary": v_stat}),
        Claim(f"context switch with {k} teacher steps reaches ceiling", abs(v_ctx_diam - ceiling) <= SLACK,
              {"V_context_k": v_ctx_diam, "V_ceiling": ceiling, "k": k}),
        Claim("task-optimal values independent of teacher", indep <= SLACK, {"max_abs_diff": indep}),
        Claim("transition kernel factorises", fact.holds,
              {"rows": fact.rows_checked, "max_abs_error": fact.max_abs_error,
               "marginal_max_abs_error": fact.marginal_max_abs_error}),
    ]
    return claims


def format_report(grid: GridMap, claims: list[Claim]) -> str:
    lines = [f"# {grid.name}: {len(grid.goal_candidates)} goal candidates"]
    lines += [c.line() for c in claims]
    return "\n".join(lines)
