"""Episode replay storage and padded batch assembly.

Batches are episode-major with a shared padded length: slot t < length
holds the step taken at t, slot `length` holds the post-final snapshot
used for bootstrapping, and everything past that is zero padding with
an all-false validity flag.  Padded availability defaults to all-true
so masked argmaxes stay well defined on dead slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .episodes import EpisodeRecord
from .networks import NetConfig


class ReplayBuffer:
    """FIFO ring of episodes with uniform with-replacement sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._slots: list = []
        self._next = 0
        self.insertion_count = 0

    def __len__(self) -> int:
        return len(self._slots)

    def add(self, episode: EpisodeRecord) -> None:
        if len(self._slots) < self.capacity:
            self._slots.append(episode)
        else:
            self._slots[self._next] = episode
        self._next = (self._next + 1) % self.capacity
        self.insertion_count += 1

    def episodes(self) -> list:
        """Stored episodes in insertion order (oldest first)."""
        if len(self._slots) < self.capacity:
            return list(self._slots)
        return self._slots[self._next:] + self._slots[:self._next]

    def sample(self, rng: np.random.Generator, n: int) -> list:
        if not self._slots:
            raise UsageError("sampling from an empty buffer")
        idx = rng.integers(len(self._slots), size=n)
        return [self._slots[i] for i in idx]


def offline_quota(ratio: float, batch_size: int) -> int:
    """Offline episodes per batch: round-half-to-even of ratio * batch."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mixing ratio must lie in [0, 1], got {ratio}")
    return min(batch_size, max(0, round(ratio * batch_size)))


class MixingRatioSampler:
    """Draws each batch as a fixed offline/online episode split.

    Offline episodes are drawn first, then online ones, both uniform
    with replacement; that draw order is part of the determinism
    contract.
    """

    def __init__(self, ratio: float, offline_episodes: list, buffer: ReplayBuffer):
        self.ratio = float(ratio)
        self.offline_episodes = offline_episodes
        self.buffer = buffer
        if offline_quota(self.ratio, 1_000_000) > 0 and not offline_episodes:
            raise ConfigError("mixing ratio > 0 requires an offline dataset")

    def split(self, batch_size: int) -> tuple:
        n_off = offline_quota(self.ratio, batch_size)
        return n_off, batch_size - n_off

    def sample(self, rng: np.random.Generator, batch_size: int) -> list:
        n_off, n_on = self.split(batch_size)
        out = []
        if n_off:
            idx = rng.integers(len(self.offline_episodes), size=n_off)
            out.extend(self.offline_episodes[i] for i in idx)
        if n_on:
            out.extend(self.buffer.sample(rng, n_on))
        return out


@dataclass
class Batch:
    """Padded arrays over B episodes with S = max_length + 1 slots."""
    features: np.ndarray    # (B, S, N, input_dim)
    state: np.ndarray       # (B, S, state_dim)
    avail: np.ndarray       # (B, S, N, A) bool
    actions: np.ndarray     # (B, S-1, N) int
    reward: np.ndarray      # (B, S-1)
    terminated: np.ndarray  # (B, S-1) float 0/1
    truncated: np.ndarray   # (B, S-1) float 0/1
    valid: np.ndarray       # (B, S-1) float 0/1
    seeds: tuple = ()       # episode seeds, for abort diagnostics

    @property
    def n_episodes(self) -> int:
        return self.features.shape[0]

    @property
    def max_len(self) -> int:
        return self.features.shape[1] - 1

    @property
    def n_valid(self) -> float:
        return float(self.valid.sum())


def build_features(obs: np.ndarray, actions: np.ndarray, valid_slots: np.ndarray,
                   cfg: NetConfig) -> np.ndarray:
    """Vectorized feature assembly matching AgentHistory slot for slot.

    obs (B, S, N, obs_dim); actions (B, S-1, N) with -1 on padding;
    valid_slots (B, S) flags real snapshots.  Slot t sees obs t-k+1..t
    and actions t-k..t-1, zero-padded before the episode start.
    """
    b, s, n, obs_dim = obs.shape
    k = cfg.history_len
    a = cfg.action_dim

    obs_padded = np.zeros((b, k - 1 + s, n, obs_dim), dtype=np.float64)
    obs_padded[:, k - 1:] = obs * valid_slots[:, :, None, None]

    onehot = np.zeros((b, s - 1, n, a), dtype=np.float64)
    real = actions >= 0
    bb, tt, nn = np.nonzero(real)
    onehot[bb, tt, nn, actions[real]] = 1.0
    act_padded = np.zeros((b, k + s - 1, n, a), dtype=np.float64)
    act_padded[:, k:] = onehot

    parts = []
    for d in range(k):
        parts.append(obs_padded[:, d:d + s])
    for d in range(k):
        parts.append(act_padded[:, d:d + s])
    if cfg.append_agent_id:
        ids = np.broadcast_to(np.eye(n, dtype=np.float64), (b, s, n, n))
        parts.append(ids)
    return np.ascontiguousarray(np.concatenate(parts, axis=3))


def batch_from_episodes(episodes: list, cfg: NetConfig) -> Batch:
    if not episodes:
        raise UsageError("cannot build a batch from zero episodes")
    b = len(episodes)
    lengths = [ep.length for ep in episodes]
    s = max(lengths) + 1
    n = cfg.n_agents
    first = episodes[0].steps[0]
    obs_dim = first.obs.shape[1]
    state_dim = first.state.shape[0]
    a = first.avail.shape[1]
    ep_dims = (first.obs.shape[0], obs_dim, a)
    if ep_dims != (cfg.n_agents, cfg.obs_dim, cfg.action_dim):
        raise UsageError(
            f"episode dims {ep_dims} do not match net config "
            f"{(cfg.n_agents, cfg.obs_dim, cfg.action_dim)}")

    obs = np.zeros((b, s, n, obs_dim), dtype=np.float64)
    state = np.zeros((b, s, state_dim), dtype=np.float64)
    avail = np.ones((b, s, n, a), dtype=bool)
    actions = np.full((b, s - 1, n), -1, dtype=np.int64)
    reward = np.zeros((b, s - 1), dtype=np.float64)
    terminated = np.zeros((b, s - 1), dtype=np.float64)
    truncated = np.zeros((b, s - 1), dtype=np.float64)
    valid = np.zeros((b, s - 1), dtype=np.float64)
    valid_slots = np.zeros((b, s), dtype=np.float64)

    for e, ep in enumerate(episodes):
        le = ep.length
        for t, step in enumerate(ep.steps):
            obs[e, t] = step.obs
            state[e, t] = step.state
            avail[e, t] = step.avail
            actions[e, t] = step.action
            reward[e, t] = step.reward
            terminated[e, t] = float(step.terminated)
            truncated[e, t] = float(step.truncated)
        obs[e, le] = ep.final_obs
        state[e, le] = ep.final_state
        avail[e, le] = ep.final_avail
        valid[e, :le] = 1.0
        valid_slots[e, :le + 1] = 1.0

    features = build_features(obs, actions, valid_slots, cfg)
    clean_actions = np.where(actions < 0, 0, actions)
    return Batch(features=features, state=state, avail=avail,
                 actions=clean_actions, reward=reward, terminated=terminated,
                 truncated=truncated, valid=valid,
                 seeds=tuple(ep.seed for ep in episodes))
