"""Exploration action selection and rollout policies.

Three selection modes over per-agent greedy actions:

  independent     every agent independently explores with prob eps
  sequential      one team-level coin with prob eps; on success exactly
                  one uniformly chosen agent explores, so the joint
                  action differs from greedy in at most one slot
  sequential_dec  decentralized version: each agent explores with prob
                  eps / n_agents, no coordination required

RNG draw order is part of the determinism contract and is fixed:
independent and sequential_dec draw one uniform per agent in index
order, with the replacement-action draw (uniform over that agent's
available actions) taken immediately after a successful coin;
sequential draws the team coin, then the agent index, then the action.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .env import AgentHistory, StepClock
from .networks import QmixModel, greedy_actions
from .schedules import LinearSchedule


def uniform_available(avail_row: np.ndarray, rng: np.random.Generator) -> int:
    idx = np.flatnonzero(avail_row)
    return int(idx[rng.integers(len(idx))])


def select_independent(q: np.ndarray, avail: np.ndarray, eps: float,
                       rng: np.random.Generator) -> np.ndarray:
    actions = greedy_actions(q, avail)
    for i in range(q.shape[0]):
        if rng.random() < eps:
            actions[i] = uniform_available(avail[i], rng)
    return actions


def select_sequential(q: np.ndarray, avail: np.ndarray, eps: float,
                      rng: np.random.Generator) -> np.ndarray:
    actions = greedy_actions(q, avail)
    if rng.random() < eps:
        i = int(rng.integers(q.shape[0]))
        actions[i] = uniform_available(avail[i], rng)
    return actions


def select_sequential_dec(q: np.ndarray, avail: np.ndarray, eps: float,
                          rng: np.random.Generator) -> np.ndarray:
    actions = greedy_actions(q, avail)
    n = q.shape[0]
    per_agent = eps / n
    for i in range(n):
        if rng.random() < per_agent:
            actions[i] = uniform_available(avail[i], rng)
    return actions


SELECTORS = {
    "independent": select_independent,
    "sequential": select_sequential,
    "sequential_dec": select_sequential_dec,
}


class QPolicy:
    """Greedy-with-exploration policy over a QmixModel.

    epsilon can be a fixed float, or driven by (schedule, clock) so it
    tracks the global environment-step count during training.
    """

    def __init__(self, model: QmixModel, mode: str = "independent",
                 epsilon: float = 0.0, schedule: LinearSchedule | None = None,
                 clock: StepClock | None = None):
        if mode not in SELECTORS:
            raise ConfigError(f"unknown exploration mode {mode!r}")
        if (schedule is None) != (clock is None):
            raise ConfigError("schedule and clock must be given together")
        self.model = model
        self.mode = mode
        self.epsilon = float(epsilon)
        self.schedule = schedule
        self.clock = clock
        cfg = model.cfg
        self.history = AgentHistory(cfg.n_agents, cfg.obs_dim, cfg.action_dim,
                                    cfg.history_len, cfg.append_agent_id)
        self._prev_action: np.ndarray | None = None

    def current_epsilon(self) -> float:
        if self.schedule is not None:
            return self.schedule.value(self.clock.t)
        return self.epsilon

    def begin_episode(self) -> None:
        self.history.reset()
        self._prev_action = None

    def act(self, obs: np.ndarray, avail: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
        self.history.push(obs, self._prev_action)
        q = self.model.agent_q(self.history.features())
        actions = SELECTORS[self.mode](q, avail, self.current_epsilon(), rng)
        self._prev_action = actions
        return actions


class UniformRandomPolicy:
    """Uniform over available actions; the behavior floor for baselines."""

    def begin_episode(self) -> None:
        pass

    def act(self, obs: np.ndarray, avail: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
        return np.array([uniform_available(row, rng) for row in avail], dtype=np.int64)


class ScriptedPolicy:
    """Replays a fixed joint-action sequence; for tests and oracles."""

    def __init__(self, joint_actions):
        self.joint_actions = [np.asarray(a, dtype=np.int64) for a in joint_actions]
        self._i = 0

    def begin_episode(self) -> None:
        self._i = 0

    def act(self, obs, avail, rng) -> np.ndarray:
        a = self.joint_actions[self._i]
        self._i += 1
        return a
