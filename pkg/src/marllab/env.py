"""Exactly solvable cooperative environments.

Both fixtures are deterministic finite-horizon team tasks: a one-shot
penalized coordination game and a shared-goal gridworld.  Dynamics are
pure functions of (state, joint action), so replaying a recorded action
sequence from the same reset reproduces every array bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation, UsageError
from .episodes import EpisodeRecord, StepRecord
from .networks import assemble_features


@dataclass(frozen=True)
class DecPomdpSpec:
    """Dimensions and horizon shared by learners, buffers, and oracles."""
    n_agents: int
    state_dim: int
    obs_dim: int
    action_dim: int
    horizon: int
    discount: float

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigError("need at least 2 agents")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount must lie in [0, 1]")


@dataclass
class StepOutcome:
    next_state: np.ndarray
    next_obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    avail_masks: np.ndarray


class MatrixGame:
    """One-shot 2-agent coordination game with a penalty-guarded optimum.

    The default payoff places the best joint action at (0, 0) next to
    steep miscoordination penalties, with a mediocre safe block at the
    higher action indices.
    """

    DEFAULT_PAYOFF = (
        (8.0, -12.0, -12.0),
        (-12.0, 6.0, 0.0),
        (-12.0, 0.0, 6.0),
    )

    name = "matrix"

    def __init__(self, payoff=None):
        self.payoff = np.array(
            self.DEFAULT_PAYOFF if payoff is None else payoff, dtype=np.float64)
        if self.payoff.ndim != 2:
            raise ConfigError("payoff must be a 2-d table")
        self.spec = DecPomdpSpec(
            n_agents=2, state_dim=1, obs_dim=1,
            action_dim=self.payoff.shape[0], horizon=1, discount=1.0)
        if self.payoff.shape != (self.spec.action_dim, self.spec.action_dim):
            raise ConfigError("payoff must be square")
        self._done = True

    def fixture_manifest(self) -> dict:
        return {"name": self.name,
                "payoff": [[float(x) for x in r] for r in self.payoff]}

    def _obs(self) -> np.ndarray:
        return np.ones((2, 1), dtype=np.float64)

    def _avail(self) -> np.ndarray:
        return np.ones((2, self.spec.action_dim), dtype=bool)

    def reset(self, seed: int = 0):
        self._done = False
        return np.ones(1, dtype=np.float64), self._obs(), self._avail()

    def step(self, actions: np.ndarray) -> StepOutcome:
        if self._done:
            raise UsageError("step() after episode end; call reset()")
        actions = np.asarray(actions)
        if actions.shape != (2,):
            raise ContractViolation(f"expected 2 actions, got shape {actions.shape}")
        a = self.spec.action_dim
        if not ((0 <= actions) & (actions < a)).all():
            raise ContractViolation(f"action out of range: {actions.tolist()}")
        self._done = True
        return StepOutcome(
            next_state=np.ones(1, dtype=np.float64),
            next_obs=self._obs(),
            reward=float(self.payoff[actions[0], actions[1]]),
            terminated=True,
            truncated=False,
            avail_masks=self._avail(),
        )


# action inventory: 0 stay, 1 up, 2 down, 3 left, 4 right
GRID_MOVES = np.array([(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)], dtype=np.int64)


class GridWorld:
    """Shared-goal gridworld: the team succeeds when every agent stands
    on some goal cell (stacking allowed).

    Rewards: -0.05 per step, +10 on the step that completes the goal,
    which also terminates the episode.  Off-grid moves are masked out
    of the availability mask rather than remapped.  Spawns are fixed,
    so the fixture is exactly solvable for its single start state.
    """

    name = "gridworld"

    DEFAULT_GOALS = ((0, 0), (0, 6), (6, 0), (6, 6))
    DEFAULT_SPAWNS = ((0, 1), (1, 6), (6, 5), (5, 0))

    STEP_COST = -0.05
    SUCCESS_REWARD = 10.0
    OBS_RADIUS = 2

    def __init__(self, grid_size: int = 7, n_agents: int = 4,
                 goals=None, spawns=None, horizon: int = 40,
                 discount: float = 0.99):
        self.grid_size = int(grid_size)
        if self.grid_size < 2:
            raise ConfigError("grid_size must be >= 2")
        if goals is None and spawns is None and self.grid_size == 7 and n_agents == 4:
            goals, spawns = self.DEFAULT_GOALS, self.DEFAULT_SPAWNS
        if goals is None or spawns is None:
            raise ConfigError("non-default layouts must give both goals and spawns")
        self.goals = tuple((int(r), int(c)) for r, c in goals)
        self.spawns = tuple((int(r), int(c)) for r, c in spawns)
        if len(self.spawns) != n_agents:
            raise ConfigError("one spawn cell per agent is required")
        if not self.goals:
            raise ConfigError("at least one goal cell is required")
        for r, c in self.goals + self.spawns:
            if not (0 <= r < self.grid_size and 0 <= c < self.grid_size):
                raise ConfigError(f"cell ({r},{c}) outside the grid")
        side = 2 * self.OBS_RADIUS + 1
        self.spec = DecPomdpSpec(
            n_agents=int(n_agents), state_dim=2 * int(n_agents),
            obs_dim=2 + side * side, action_dim=5,
            horizon=int(horizon), discount=float(discount))
        self._goal_grid = np.zeros((self.grid_size, self.grid_size), dtype=np.float64)
        for r, c in self.goals:
            self._goal_grid[r, c] = 1.0
        self._pos = None
        self._t = 0
        self._done = True

    def fixture_manifest(self) -> dict:
        return {
            "name": self.name, "grid_size": self.grid_size,
            "n_agents": self.spec.n_agents, "horizon": self.spec.horizon,
            "discount": self.spec.discount,
            "goals": [list(g) for g in self.goals],
            "spawns": [list(s) for s in self.spawns],
        }

    def _state(self) -> np.ndarray:
        return (self._pos.reshape(-1) / (self.grid_size - 1)).astype(np.float64)

    def _obs(self) -> np.ndarray:
        n = self.spec.n_agents
        rad = self.OBS_RADIUS
        side = 2 * rad + 1
        out = np.zeros((n, self.spec.obs_dim), dtype=np.float64)
        padded = np.zeros((self.grid_size + 2 * rad,) * 2, dtype=np.float64)
        padded[rad:rad + self.grid_size, rad:rad + self.grid_size] = self._goal_grid
        for i, (r, c) in enumerate(self._pos):
            out[i, 0] = r / (self.grid_size - 1)
            out[i, 1] = c / (self.grid_size - 1)
            out[i, 2:] = padded[r:r + side, c:c + side].reshape(-1)
        return out

    def _avail(self) -> np.ndarray:
        n = self.spec.n_agents
        masks = np.zeros((n, 5), dtype=bool)
        for i, (r, c) in enumerate(self._pos):
            tgt = GRID_MOVES + (r, c)
            ok = ((tgt >= 0) & (tgt < self.grid_size)).all(axis=1)
            masks[i] = ok
        return masks

    def _success(self) -> bool:
        return all((int(r), int(c)) in set(self.goals) for r, c in self._pos)

    def reset(self, seed: int = 0):
        self._pos = np.array(self.spawns, dtype=np.int64)
        self._t = 0
        self._done = False
        return self._state(), self._obs(), self._avail()

    def step(self, actions: np.ndarray) -> StepOutcome:
        if self._done:
            raise UsageError("step() after episode end; call reset()")
        actions = np.asarray(actions)
        n = self.spec.n_agents
        if actions.shape != (n,):
            raise ContractViolation(f"expected {n} actions, got shape {actions.shape}")
        if not ((0 <= actions) & (actions < 5)).all():
            raise ContractViolation(f"action out of range: {actions.tolist()}")
        avail = self._avail()
        if not avail[np.arange(n), actions].all():
            bad = np.where(~avail[np.arange(n), actions])[0]
            raise ContractViolation(
                f"unavailable action for agent(s) {bad.tolist()}: {actions.tolist()}")
        self._pos = self._pos + GRID_MOVES[actions]
        self._t += 1
        success = self._success()
        terminated = success
        truncated = (not success) and self._t >= self.spec.horizon
        self._done = terminated or truncated
        reward = self.SUCCESS_REWARD if success else self.STEP_COST
        return StepOutcome(
            next_state=self._state(), next_obs=self._obs(), reward=reward,
            terminated=terminated, truncated=truncated, avail_masks=self._avail())


def make_env(name: str, **kwargs):
    if name == "matrix":
        return MatrixGame(**kwargs)
    if name == "gridworld":
        return GridWorld(**kwargs)
    raise ConfigError(f"unknown env {name!r}")


class StepClock:
    """Mutable environment-step counter shared between loop and policy."""

    def __init__(self, t: int = 0):
        self.t = int(t)

    def advance(self, n: int = 1) -> None:
        self.t += n


class AgentHistory:
    """Sliding window of (observation, previous action) pairs per agent.

    Slots before the episode start are zero observations with action -1
    (which one-hot encodes to all zeros), so features at t=0 match the
    padding the batch assembler produces.
    """

    def __init__(self, n_agents: int, obs_dim: int, action_dim: int,
                 history_len: int = 1, append_agent_id: bool = True):
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.history_len = history_len
        self.append_agent_id = append_agent_id
        self.reset()

    def reset(self) -> None:
        k = self.history_len
        self._obs = np.zeros((k, self.n_agents, self.obs_dim), dtype=np.float64)
        self._act = np.full((k, self.n_agents), -1, dtype=np.int64)

    def push(self, obs: np.ndarray, prev_action: np.ndarray | None) -> None:
        """Advance the window to a new timestep."""
        self._obs = np.roll(self._obs, -1, axis=0)
        self._act = np.roll(self._act, -1, axis=0)
        self._obs[-1] = obs
        if prev_action is None:
            self._act[-1] = -1
        else:
            self._act[-1] = prev_action

    def features(self) -> np.ndarray:
        return assemble_features(self._obs, self._act, self.n_agents,
                                 self.action_dim, self.append_agent_id)


def run_episode(env, policy, rng: np.random.Generator, seed: int = 0,
                clock: StepClock | None = None) -> EpisodeRecord:
    """Roll one episode; returns the full record with final snapshot.

    episode_return is the discounted return from t=0 under the env's
    discount, matching how the oracles value a start state.
    """
    state, obs, avail = env.reset(seed)
    policy.begin_episode()
    record = EpisodeRecord(seed=seed)
    gamma = env.spec.discount
    scale = 1.0
    total = 0.0
    while True:
        actions = policy.act(obs, avail, rng)
        out = env.step(actions)
        record.steps.append(StepRecord(
            state=state, obs=obs, avail=avail, action=np.asarray(actions),
            reward=out.reward, terminated=out.terminated, truncated=out.truncated))
        total += scale * out.reward
        scale *= gamma
        if clock is not None:
            clock.advance()
        state, obs, avail = out.next_state, out.next_obs, out.avail_masks
        if out.terminated or out.truncated:
            break
    record.final_state = state
    record.final_obs = obs
    record.final_avail = avail
    record.episode_return = total
    return record
