"""Agent action-value networks and the monotone mixing network.

One shared two-layer MLP scores every agent's actions (a one-hot agent
id in the input keeps policies distinguishable).  The mixer combines
per-agent chosen values into a team value using weights emitted by
state-conditioned hypernetworks; absolute value on those weights keeps
every d(team)/d(agent) partial nonnegative, so per-agent argmaxes and
the joint argmax agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from . import tensor as T
from .tensor import Node, ParamSet, Tape


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs shared by offline and online phases."""
    n_agents: int
    obs_dim: int
    action_dim: int
    state_dim: int
    hidden_dim: int = 64
    mixing_hidden_dim: int = 32
    hyper_hidden_dim: int = 64
    history_len: int = 1
    append_agent_id: bool = True
    share_agent_weights: bool = True

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigError("need at least 2 agents")
        if self.history_len < 1:
            raise ConfigError("history_len must be >= 1")
        if not self.share_agent_weights:
            raise ConfigError("per-agent distinct networks are not supported")

    @property
    def input_dim(self) -> int:
        base = self.history_len * (self.obs_dim + self.action_dim)
        return base + (self.n_agents if self.append_agent_id else 0)

    def manifest(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "state_dim": self.state_dim,
            "hidden_dim": self.hidden_dim,
            "mixing_hidden_dim": self.mixing_hidden_dim,
            "hyper_hidden_dim": self.hyper_hidden_dim,
            "history_len": self.history_len,
            "append_agent_id": int(self.append_agent_id),
        }


def config_from_manifest(m: dict) -> NetConfig:
    return NetConfig(
        n_agents=int(m["n_agents"]), obs_dim=int(m["obs_dim"]),
        action_dim=int(m["action_dim"]), state_dim=int(m["state_dim"]),
        hidden_dim=int(m["hidden_dim"]), mixing_hidden_dim=int(m["mixing_hidden_dim"]),
        hyper_hidden_dim=int(m["hyper_hidden_dim"]), history_len=int(m["history_len"]),
        append_agent_id=bool(m["append_agent_id"]),
    )


def assemble_features(obs_stack: np.ndarray, act_stack: np.ndarray,
                      n_agents: int, action_dim: int, append_id: bool) -> np.ndarray:
    """Build per-agent input features for one timestep.

    obs_stack: (k, N, obs_dim) observations, oldest first, zero-padded.
    act_stack: (k, N) previous actions aligned with obs_stack rows; -1
    encodes "no action yet" and produces an all-zero one-hot block.
    """
    k, n, obs_dim = obs_stack.shape
    onehot = np.zeros((k, n, action_dim), dtype=np.float64)
    rows = act_stack >= 0
    kk, nn = np.nonzero(rows)
    onehot[kk, nn, act_stack[rows]] = 1.0
    # per agent: obs oldest->newest, then one-hots oldest->newest, then id
    obs_part = obs_stack.transpose(1, 0, 2).reshape(n, k * obs_dim)
    act_part = onehot.transpose(1, 0, 2).reshape(n, k * action_dim)
    parts = [obs_part, act_part]
    if append_id:
        parts.append(np.eye(n_agents, dtype=np.float64))
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class AgentQNet:
    """Shared two-layer ReLU MLP mapping features to per-action values.

    The output layer starts at zero, so every action scores 0.0 before
    the first update and early greedy behavior is index-deterministic.
    """

    def __init__(self, cfg: NetConfig, params: ParamSet, rng: np.random.Generator,
                 prefix: str = "agent"):
        self.cfg = cfg
        d_in, d_h, d_out = cfg.input_dim, cfg.hidden_dim, cfg.action_dim
        self.w1 = params.add(f"{prefix}.fc1.w", _uniform_init(rng, (d_in, d_h), d_in))
        self.b1 = params.add(f"{prefix}.fc1.b", _uniform_init(rng, (d_h,), d_in))
        self.w2 = params.add(f"{prefix}.fc2.w", np.zeros((d_h, d_out)))
        self.b2 = params.add(f"{prefix}.fc2.b", np.zeros((d_out,)))

    def forward(self, tape: Tape | None, x: Node) -> Node:
        h = T.relu(tape, T.linear(tape, x, self.w1, self.b1))
        return T.linear(tape, h, self.w2, self.b2)

    def values(self, features: np.ndarray) -> np.ndarray:
        """Detached forward pass on raw features (M, input_dim)."""
        return self.forward(None, T.constant(features)).value


class MixingNet:
    """State-conditioned monotone mixer: (M, N) agent values -> (M,) team value."""

    def __init__(self, cfg: NetConfig, params: ParamSet, rng: np.random.Generator,
                 prefix: str = "mix"):
        self.cfg = cfg
        d_s, d_e, d_h = cfg.state_dim, cfg.mixing_hidden_dim, cfg.hyper_hidden_dim
        n = cfg.n_agents
        add = params.add

        def layer(name, d1, d2):
            return (add(f"{prefix}.{name}.w", _uniform_init(rng, (d1, d2), d1)),
                    add(f"{prefix}.{name}.b", _uniform_init(rng, (d2,), d1)))

        self.hw1_1 = layer("hw1.l1", d_s, d_h)
        self.hw1_2 = layer("hw1.l2", d_h, n * d_e)
        self.hw2_1 = layer("hw2.l1", d_s, d_h)
        self.hw2_2 = layer("hw2.l2", d_h, d_e)
        self.hb1 = layer("hb1", d_s, d_e)
        self.hb2_1 = layer("hb2.l1", d_s, d_h)
        self.hb2_2 = layer("hb2.l2", d_h, 1)

    def _two_layer(self, tape, s: Node, first, second) -> Node:
        h = T.relu(tape, T.linear(tape, s, *first))
        return T.linear(tape, h, *second)

    def forward(self, tape: Tape | None, agent_values: Node, state: Node) -> Node:
        cfg = self.cfg
        m = agent_values.value.shape[0]
        w1 = T.abs_op(tape, self._two_layer(tape, state, self.hw1_1, self.hw1_2))
        w1 = T.reshape(tape, w1, (m, cfg.n_agents, cfg.mixing_hidden_dim))
        b1 = T.reshape(tape, T.linear(tape, state, *self.hb1),
                       (m, 1, cfg.mixing_hidden_dim))
        q_row = T.reshape(tape, agent_values, (m, 1, cfg.n_agents))
        hidden = T.elu(tape, T.add(tape, T.bmm(tape, q_row, w1), b1))
        w2 = T.abs_op(tape, self._two_layer(tape, state, self.hw2_1, self.hw2_2))
        w2 = T.reshape(tape, w2, (m, cfg.mixing_hidden_dim, 1))
        b2 = T.reshape(tape, self._two_layer(tape, state, self.hb2_1, self.hb2_2),
                       (m, 1, 1))
        out = T.add(tape, T.bmm(tape, hidden, w2), b2)
        return T.reshape(tape, out, (m,))

    def values(self, agent_values: np.ndarray, state: np.ndarray) -> np.ndarray:
        return self.forward(None, T.constant(agent_values), T.constant(state)).value


class QmixModel:
    """Agent net plus mixer over one ParamSet."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator | None = None,
                 params: ParamSet | None = None):
        self.cfg = cfg
        self.params = ParamSet() if params is None else params
        if rng is None:
            rng = np.random.default_rng(0)
        self.agent = AgentQNet(cfg, self.params, rng)
        self.mixer = MixingNet(cfg, self.params, rng)

    def agent_q(self, features: np.ndarray) -> np.ndarray:
        """Per-agent action values for one step of features (N, input_dim)."""
        return self.agent.values(features)

    def team_value(self, features: np.ndarray, actions: np.ndarray,
                   state: np.ndarray) -> float:
        """Detached team value for one step: features (N, in), state (state_dim,)."""
        q = self.agent.values(features)
        chosen = q[np.arange(self.cfg.n_agents), actions][None, :]
        return float(self.mixer.values(chosen, state[None, :])[0])

    def clone(self, rng_seed: int = 0) -> "QmixModel":
        other = QmixModel(self.cfg, np.random.default_rng(rng_seed))
        other.params.copy_values_from(self.params)
        return other


def greedy_actions(q_values: np.ndarray, avail: np.ndarray) -> np.ndarray:
    """Masked per-agent argmax; ties go to the lowest action index."""
    avail = np.asarray(avail, dtype=bool)
    if not avail.any(axis=-1).all():
        raise UsageError("every agent needs at least one available action")
    masked = np.where(avail, q_values, -np.inf)
    return masked.argmax(axis=-1)


class TargetPair:
    """Live model plus a hard-synced target copy."""

    def __init__(self, live: QmixModel, sync_interval: int):
        if sync_interval < 1:
            raise ConfigError("sync_interval must be >= 1")
        self.live = live
        self.target = live.clone()
        self.sync_interval = sync_interval

    def maybe_sync(self, update_count: int) -> bool:
        """Hard-copy live into target every sync_interval updates."""
        if update_count % self.sync_interval == 0:
            self.target.params.copy_values_from(self.live.params)
            return True
        return False
