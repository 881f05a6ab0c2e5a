"""Offline pretraining: TD regression plus a conservative value gap.

The objective is

    loss = mse_td + cql_weight * (E_mu[Q_team] - E_data[Q_team])

where mu is a comparison action distribution (uniform over available
actions by default, estimated with a few samples per step).  With
cql_weight == 0 the update is plain TD and shares its exact code path
with the online learner at memory weight 0, so the two are bit-equal
on identical batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from . import qlearn
from .networks import QmixModel, TargetPair
from .optim import Adam
from .replay import Batch
from .tensor import Tape, backprop


@dataclass
class LearnerSettings:
    """Optimization knobs shared by both learners."""
    gamma: float
    lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    target_sync: int = 200
    cql_weight: float = 0.0
    mu_samples: int = 4
    mu_mode: str = "uniform"
    mu_temperature: float = 1.0

    def __post_init__(self):
        if self.cql_weight < 0.0:
            raise ConfigError("cql_weight must be >= 0")
        if self.mu_samples < 1:
            raise ConfigError("mu_samples must be >= 1")


class TdLearnerBase:
    """Owns the live/target pair, the optimizer, and the update counter."""

    def __init__(self, model: QmixModel, settings: LearnerSettings):
        self.settings = settings
        self.pair = TargetPair(model, settings.target_sync)
        self.opt = Adam(model.params, lr=settings.lr, beta1=settings.adam_beta1,
                        beta2=settings.adam_beta2, eps=settings.adam_eps)
        self.update_count = 0

    @property
    def model(self) -> QmixModel:
        return self.pair.live

    def _guard_batch(self, batch: Batch) -> None:
        for name in ("features", "state", "reward"):
            if not np.all(np.isfinite(getattr(batch, name))):
                raise NumericalError(
                    f"non-finite {name} in batch; episode seeds {list(batch.seeds)}")

    def _td_parts(self, tape: Tape, batch: Batch):
        """Live team values at logged actions plus detached TD targets."""
        q_all = qlearn.agent_q_all(tape, self.model, batch)
        team = qlearn.team_q_logged(tape, self.model, batch, q_all)
        targets = qlearn.bootstrap_targets(self.pair.target, batch,
                                           self.settings.gamma)
        return q_all, team, targets

    def _apply(self, tape: Tape, loss, batch: Batch) -> float:
        value = float(loss.value)
        if not np.isfinite(value):
            raise NumericalError(
                f"non-finite loss at update {self.update_count + 1}; "
                f"batch episode seeds {list(batch.seeds)}")
        backprop(tape, loss)
        self.opt.step()
        self.update_count += 1
        self.pair.maybe_sync(self.update_count)
        return value

    def _conservative_term(self, tape: Tape, batch: Batch, q_all, team, rng):
        s = self.settings
        q_ref = None
        if s.mu_mode == "softmax":
            b, sl, n, _ = batch.features.shape
            q_ref = q_all.value.reshape(b, sl - 1, n, -1)
        mu_actions = qlearn.sample_mu_actions(
            rng, batch, s.mu_samples, mode=s.mu_mode, q_ref=q_ref,
            temperature=s.mu_temperature)
        return qlearn.conservative_gap(tape, self.model, batch, q_all,
                                       team, mu_actions)


class OfflineLearner(TdLearnerBase):
    def update(self, batch: Batch, rng: np.random.Generator) -> dict:
        from . import tensor as T

        s = self.settings
        self._guard_batch(batch)
        tape = Tape()
        q_all, team, targets = self._td_parts(tape, batch)
        valid_flat = batch.valid.reshape(-1)
        td_loss = qlearn.masked_mse(tape, team, targets.reshape(-1), valid_flat)
        metrics = {
            "td_loss": float(td_loss.value),
            "q_mean": float((team.value * valid_flat).sum() / valid_flat.sum()),
        }
        if s.cql_weight > 0.0:
            gap = self._conservative_term(tape, batch, q_all, team, rng)
            loss = T.add(tape, td_loss, T.multiply(tape, gap, s.cql_weight))
            metrics["cql_gap"] = float(gap.value)
        else:
            loss = td_loss
            metrics["cql_gap"] = None
        metrics["loss"] = self._apply(tape, loss, batch)
        return metrics
