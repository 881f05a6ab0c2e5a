"""Shared pieces of the temporal-difference learners.

Conventions: a batch has S snapshot slots and L = S - 1 step slots.
Live (tape-recorded) passes only ever touch step slots; bootstrap and
frozen-network values come from tape-free passes, so they are detached
by construction rather than by a stop-gradient marker.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from . import tensor as T
from .tensor import Node, Tape
from .networks import QmixModel
from .replay import Batch


def agent_q_all(tape: Tape | None, model: QmixModel, batch: Batch) -> Node:
    """Per-agent action values on step slots: node of shape (B*L*N, A)."""
    b, s, n, f = batch.features.shape
    x = T.constant(batch.features[:, :-1].reshape(b * (s - 1) * n, f))
    return model.agent.forward(tape, x)


def team_q_logged(tape: Tape | None, model: QmixModel, batch: Batch,
                  q_all: Node) -> Node:
    """Mix the logged actions' values: node of shape (B*L,)."""
    b, s, n, _ = batch.features.shape
    l = s - 1
    return team_q_for_actions(tape, model, batch, q_all,
                              batch.actions.reshape(b * l * n))


def team_q_for_actions(tape: Tape | None, model: QmixModel, batch: Batch,
                       q_all: Node, flat_actions: np.ndarray) -> Node:
    b, s, n, _ = batch.features.shape
    l = s - 1
    chosen = T.take_per_row(tape, q_all, flat_actions)       # (B*L*N,)
    per_agent = T.reshape(tape, chosen, (b * l, n))
    state = T.constant(batch.state[:, :-1].reshape(b * l, -1))
    return model.mixer.forward(tape, per_agent, state)       # (B*L,)


def logged_team_values(model: QmixModel, batch: Batch) -> np.ndarray:
    """Detached Q_team at the logged actions, shape (B, L)."""
    b, s, _, _ = batch.features.shape
    q_all = agent_q_all(None, model, batch)
    out = team_q_logged(None, model, batch, q_all)
    return out.value.reshape(b, s - 1)


def bootstrap_targets(model: QmixModel, batch: Batch, gamma: float) -> np.ndarray:
    """One-step targets r + gamma * (1 - terminated) * max_a Q_team(next).

    The joint max decomposes into per-agent masked maxes because the
    mixer is monotone in every agent value.  Terminated steps reduce to
    the reward alone; truncated steps keep their bootstrap, which is
    why batches carry the post-final snapshot.
    """
    b, s, n, f = batch.features.shape
    l = s - 1
    feats_next = batch.features[:, 1:].reshape(b * l * n, f)
    q_next = model.agent.values(feats_next).reshape(b, l, n, -1)
    avail_next = batch.avail[:, 1:]
    best = np.where(avail_next, q_next, -np.inf).max(axis=3)  # (B, L, N)
    state_next = batch.state[:, 1:].reshape(b * l, -1)
    team_next = model.mixer.values(best.reshape(b * l, n), state_next).reshape(b, l)
    return batch.reward + gamma * (1.0 - batch.terminated) * team_next


def masked_mse(tape: Tape | None, pred: Node, target_flat: np.ndarray,
               valid_flat: np.ndarray) -> Node:
    """Mean squared error over valid step slots."""
    n_valid = float(valid_flat.sum())
    diff = T.subtract(tape, pred, T.constant(target_flat))
    sq = T.square(tape, diff)
    weighted = T.multiply(tape, sq, valid_flat / n_valid)
    return T.sum_all(tape, weighted)


def masked_mean_node(tape: Tape | None, values: Node,
                     valid_flat: np.ndarray) -> Node:
    n_valid = float(valid_flat.sum())
    weighted = T.multiply(tape, values, valid_flat / n_valid)
    return T.sum_all(tape, weighted)


def sample_mu_actions(rng: np.random.Generator, batch: Batch, n_samples: int,
                      mode: str = "uniform", q_ref: np.ndarray | None = None,
                      temperature: float = 1.0) -> np.ndarray:
    """Sample joint actions from the comparison distribution, per step slot.

    uniform: uniform over each agent's available actions (argmax of iid
    uniforms over the available set).  softmax: per-agent softmax of the
    current live values over available actions.  Returns int array
    (n_samples, B, L, N).  One rng.random call per sample keeps the
    draw order reproducible.
    """
    avail = batch.avail[:, :-1]
    b, l, n, a = avail.shape
    out = np.empty((n_samples, b, l, n), dtype=np.int64)
    if mode == "uniform":
        for j in range(n_samples):
            u = rng.random((b, l, n, a))
            out[j] = np.where(avail, u, -1.0).argmax(axis=3)
        return out
    if mode == "softmax":
        if q_ref is None:
            raise ConfigError("softmax mu sampling needs reference q values")
        z = q_ref / max(temperature, 1e-8)
        z = np.where(avail, z, -np.inf)
        z = z - z.max(axis=3, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=3, keepdims=True)
        cdf = p.cumsum(axis=3)
        for j in range(n_samples):
            u = rng.random((b, l, n, 1))
            out[j] = (u > cdf).sum(axis=3)
        return out
    raise ConfigError(f"unknown mu sampling mode {mode!r}")


def conservative_gap(tape: Tape | None, model: QmixModel, batch: Batch,
                     q_all: Node, team_logged: Node,
                     mu_actions: np.ndarray) -> Node:
    """Mean team value under sampled actions minus under logged actions.

    Both sides share the same per-agent forward pass, so gradients flow
    through the agent net and mixer for each term.
    """
    m = mu_actions.shape[0]
    valid_flat = batch.valid.reshape(-1)
    mu_terms = []
    for j in range(m):
        flat = mu_actions[j].reshape(-1)
        team_mu = team_q_for_actions(tape, model, batch, q_all, flat)
        mu_terms.append(masked_mean_node(tape, team_mu, valid_flat))
    acc = mu_terms[0]
    for node in mu_terms[1:]:
        acc = T.add(tape, acc, node)
    mu_mean = T.multiply(tape, acc, 1.0 / m)
    data_mean = masked_mean_node(tape, team_logged, valid_flat)
    return T.subtract(tape, mu_mean, data_mean)
