"""Online fine-tuning against a frozen offline value memory.

Per step slot the memory target is

    max( Q_offline(features, logged action),  r + gamma * max_a' Q_target )

with both branches detached; on terminated steps the TD branch is the
reward alone.  The loss blends plain TD regression with regression on
the memory target:

    (1 - w) * mse(Q, td_target) + w * mse(Q, memory_target)

where w is the annealed memory weight.  At w == 0 the memory branch is
skipped entirely, so the update is computation-for-computation the
plain TD update.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from . import qlearn
from . import tensor as T
from .networks import QmixModel
from .offline import LearnerSettings, TdLearnerBase
from .replay import Batch
from .tensor import Tape


class OnlineLearner(TdLearnerBase):
    """Fine-tunes a model; the offline model is only needed if the
    memory weight can ever be positive."""

    def __init__(self, model: QmixModel, settings: LearnerSettings,
                 offline_model: QmixModel | None = None):
        super().__init__(model, settings)
        self.offline_model = offline_model

    def memory_targets(self, batch: Batch, td_targets: np.ndarray):
        """Detached max of frozen offline value and TD target, shape (B, L)."""
        if self.offline_model is None:
            raise ConfigError("memory weight > 0 requires an offline model")
        frozen = qlearn.logged_team_values(self.offline_model, batch)
        memory_won = frozen >= td_targets
        return np.where(memory_won, frozen, td_targets), memory_won

    def update(self, batch: Batch, memory_weight: float,
               rng: np.random.Generator) -> dict:
        if not 0.0 <= memory_weight <= 1.0:
            raise ConfigError(f"memory weight must lie in [0, 1], got {memory_weight}")
        s = self.settings
        self._guard_batch(batch)
        tape = Tape()
        q_all, team, td_targets = self._td_parts(tape, batch)
        valid_flat = batch.valid.reshape(-1)
        td_loss = qlearn.masked_mse(tape, team, td_targets.reshape(-1), valid_flat)
        metrics = {
            "td_loss": float(td_loss.value),
            "memory_weight": memory_weight,
            "q_mean": float((team.value * valid_flat).sum() / valid_flat.sum()),
            "memory_loss": None,
            "memory_branch_fraction": None,
            "cql_gap": None,
        }
        if memory_weight > 0.0:
            targets, memory_won = self.memory_targets(batch, td_targets)
            mem_loss = qlearn.masked_mse(tape, team, targets.reshape(-1), valid_flat)
            loss = T.add(tape,
                         T.multiply(tape, td_loss, 1.0 - memory_weight),
                         T.multiply(tape, mem_loss, memory_weight))
            metrics["memory_loss"] = float(mem_loss.value)
            metrics["memory_branch_fraction"] = float(
                (memory_won * batch.valid).sum() / batch.valid.sum())
        else:
            loss = td_loss
        if s.cql_weight > 0.0:
            gap = self._conservative_term(tape, batch, q_all, team, rng)
            loss = T.add(tape, loss, T.multiply(tape, gap, s.cql_weight))
            metrics["cql_gap"] = float(gap.value)
        metrics["loss"] = self._apply(tape, loss, batch)
        return metrics
