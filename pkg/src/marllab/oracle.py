"""Exact solvers for the bundled fixtures.

Two independent routes exist for the gridworld: finite-horizon value
iteration over the reduced joint state space, and a closed-form value
that only uses Manhattan distances.  Tests compare them; production
code may use either.

The value iteration treats agents as interchangeable (they share the
goal set, dynamics, and reward), so a joint state is a multiset of
cells.  That cuts 49^4 ordered states down to C(52, 4) = 270725 for the
default fixture.  Success is a property of the transition target: a
state whose agents all stand on goals still admits one more step, which
is what makes "spawn on the goals" worth the full bonus.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractViolation
from .env import GridWorld, MatrixGame

DENSE_CODE_LIMIT = 60_000_000


@dataclass
class ExactSolution:
    """Optimal return from the fixture start plus lookup tables.

    optimal_joint_policy / optimal_q are fully materialized for small
    instances (see materialize_limit); policy_fn / q_fn / value_fn work
    at any size.  State keys are canonical: 0 for the matrix game,
    sorted cell tuples for the gridworld.
    """
    optimal_return: float
    optimal_joint_policy: dict = field(default_factory=dict)
    optimal_q: dict = field(default_factory=dict)
    value_fn: object | None = None
    policy_fn: object | None = None
    q_fn: object | None = None
    n_states: int = 0


def solve_matrix_game(env: MatrixGame) -> ExactSolution:
    """Exhaustive search over the payoff table; ties break to lowest index."""
    payoff = env.payoff
    a = payoff.shape[0]
    best = np.unravel_index(int(np.argmax(payoff)), payoff.shape)
    best = (int(best[0]), int(best[1]))
    q = {(0, (i, j)): float(payoff[i, j])
         for i in range(a) for j in range(a)}
    return ExactSolution(
        optimal_return=float(payoff[best]),
        optimal_joint_policy={0: best},
        optimal_q=q,
        value_fn=lambda s: float(payoff[best]),
        policy_fn=lambda s: best,
        q_fn=lambda s, act: float(payoff[act[0], act[1]]),
        n_states=1,
    )


def gridworld_optimal_return(env: GridWorld) -> float:
    """Closed-form optimal discounted return for an unobstructed layout.

    The slowest agent pins the completion step: with stacking allowed
    and stay always available, the team can finish exactly at
    k = max(1, max_i min_g manhattan(spawn_i, g)) steps, paying the step
    cost before that and the bonus on the completing step.  Finishing
    later is strictly worse, earlier is infeasible.
    """
    dists = [min(abs(r - gr) + abs(c - gc) for gr, gc in env.goals)
             for r, c in env.spawns]
    k = max(1, max(dists))
    gamma, horizon = env.spec.discount, env.spec.horizon
    if k > horizon:
        return env.STEP_COST * sum(gamma ** t for t in range(horizon))
    return (env.STEP_COST * sum(gamma ** t for t in range(k - 1))
            + env.SUCCESS_REWARD * gamma ** (k - 1))


class GridworldSolver:
    """Finite-horizon value iteration over multiset joint states."""

    def __init__(self, env: GridWorld, max_states: int = 1_000_000):
        self.env = env
        w = env.grid_size
        n = env.spec.n_agents
        cells = w * w
        if cells ** n > DENSE_CODE_LIMIT:
            raise CapacityError(
                f"dense code table would need {cells ** n} entries "
                f"(limit {DENSE_CODE_LIMIT})")
        states = np.array(
            list(itertools.combinations_with_replacement(range(cells), n)),
            dtype=np.int64)
        if states.shape[0] > max_states:
            raise CapacityError(
                f"{states.shape[0]} joint states exceed the {max_states} guard")
        self.w = w
        self.n = n
        self.cells = cells
        self.states = states
        self.powers = cells ** np.arange(n, dtype=np.int64)
        lut = np.full(cells ** n, -1, dtype=np.int32)
        lut[states @ self.powers] = np.arange(states.shape[0], dtype=np.int32)
        self.lut = lut
        # off-grid moves map to self; masked actions are outcome-duplicates
        # of stay, so including them cannot change the max
        move = np.empty((cells, 5), dtype=np.int64)
        for pos in range(cells):
            r, c = divmod(pos, w)
            for a, (dr, dc) in enumerate(((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))):
                rr, cc = r + dr, c + dc
                move[pos, a] = rr * w + cc if 0 <= rr < w and 0 <= cc < w else pos
        self.move = move
        goal_cell = np.zeros(cells, dtype=bool)
        for r, c in env.goals:
            goal_cell[r * w + c] = True
        self.goal_cell = goal_cell
        self.success = goal_cell[states].all(axis=1)
        self.enter_reward = np.where(self.success, env.SUCCESS_REWARD, env.STEP_COST)
        self.sweeps_run = 0

    def state_index(self, positions) -> int:
        cells = np.sort(np.asarray(
            [int(r) * self.w + int(c) for r, c in positions], dtype=np.int64))
        return int(self.lut[cells @ self.powers])

    def sweep(self, v: np.ndarray) -> np.ndarray:
        """One backward-induction step: value with one more step of horizon."""
        gamma = self.env.spec.discount
        cont = gamma * np.where(self.success, 0.0, v)
        best = np.full(self.states.shape[0], -np.inf)
        nxt = np.empty_like(self.states)
        for joint in itertools.product(range(5), repeat=self.n):
            for i, a in enumerate(joint):
                nxt[:, i] = self.move[self.states[:, i], a]
            j = self.lut[np.sort(nxt, axis=1) @ self.powers]
            np.maximum(best, self.enter_reward[j] + cont[j], out=best)
        return best

    def solve(self) -> np.ndarray:
        """Exact values for the fixture horizon; stops early at a fixed point."""
        v = np.zeros(self.states.shape[0])
        for _ in range(self.env.spec.horizon):
            nv = self.sweep(v)
            self.sweeps_run += 1
            if np.array_equal(nv, v):
                v = nv
                break
            v = nv
        return v

    # --- lookups against a solved value table ---

    def value(self, v: np.ndarray, positions) -> float:
        return float(v[self.state_index(positions)])

    def q_value(self, v: np.ndarray, positions, actions) -> float:
        """One-step lookahead; rejects actions the env would mask off."""
        pos = np.asarray([int(r) * self.w + int(c) for r, c in positions],
                         dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        for i, a in enumerate(actions):
            if a != 0 and self.move[pos[i], a] == pos[i]:
                raise ContractViolation(f"agent {i} action {a} moves off-grid")
        new = self.move[pos, actions]
        j = int(self.lut[np.sort(new) @ self.powers])
        gamma = self.env.spec.discount
        bootstrap = 0.0 if self.success[j] else gamma * float(v[j])
        return float(self.enter_reward[j]) + bootstrap

    def greedy_action(self, v: np.ndarray, positions) -> tuple:
        """Lex-lowest optimal joint action among available actions."""
        pos = [int(r) * self.w + int(c) for r, c in positions]
        per_agent = []
        for p in pos:
            per_agent.append([a for a in range(5)
                              if a == 0 or self.move[p, a] != p])
        best_a, best_q = None, -np.inf
        for joint in itertools.product(*per_agent):
            positions_q = self.q_value(v, positions, joint)
            if positions_q > best_q:
                best_q, best_a = positions_q, joint
        return best_a


def solve_gridworld(env: GridWorld, max_states: int = 1_000_000,
                    materialize_limit: int = 20_000) -> ExactSolution:
    solver = GridworldSolver(env, max_states=max_states)
    v = solver.solve()
    n_states = solver.states.shape[0]

    def cells_to_positions(row):
        return [divmod(int(p), solver.w) for p in row]

    policy = {}
    qtab = {}
    if n_states <= materialize_limit:
        for row in solver.states:
            key = tuple(int(p) for p in row)
            positions = cells_to_positions(row)
            policy[key] = solver.greedy_action(v, positions)
            per_agent = [[a for a in range(5)
                          if a == 0 or solver.move[p, a] != p] for p in row]
            for joint in itertools.product(*per_agent):
                qtab[(key, joint)] = solver.q_value(v, positions, joint)

    spawn_positions = list(env.spawns)
    return ExactSolution(
        optimal_return=solver.value(v, spawn_positions),
        optimal_joint_policy=policy,
        optimal_q=qtab,
        value_fn=lambda positions: solver.value(v, positions),
        policy_fn=lambda positions: solver.greedy_action(v, positions),
        q_fn=lambda positions, actions: solver.q_value(v, positions, actions),
        n_states=n_states,
    )


def solve_env(env) -> ExactSolution:
    if isinstance(env, MatrixGame):
        return solve_matrix_game(env)
    if isinstance(env, GridWorld):
        return solve_gridworld(env)
    raise ContractViolation(f"no oracle for env {type(env).__name__}")


def oracle_optimal_return(env) -> float:
    """Cheap route to the start-state optimum; VI-free for the gridworld."""
    if isinstance(env, MatrixGame):
        return solve_matrix_game(env).optimal_return
    if isinstance(env, GridWorld):
        return gridworld_optimal_return(env)
    raise ContractViolation(f"no oracle for env {type(env).__name__}")
