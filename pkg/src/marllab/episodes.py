"""Episode records and the JSONL dataset container.

A dataset file is one metadata object on the first line followed by one
episode object per line.  Encoding is canonical (sorted keys, compact
separators, shortest round-trippable float repr), so saving, loading,
and saving again yields byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArtifactError, ContractViolation

DATASET_FORMAT_VERSION = 1


@dataclass
class StepRecord:
    """One transition: arrays are snapshots taken before the action."""
    state: np.ndarray          # (state_dim,)
    obs: np.ndarray            # (N, obs_dim)
    avail: np.ndarray          # (N, A) bool
    action: np.ndarray         # (N,) int
    reward: float
    terminated: bool
    truncated: bool


@dataclass
class EpisodeRecord:
    """A full trajectory plus the post-final snapshot used for bootstrapping."""
    seed: int
    steps: list = field(default_factory=list)
    final_state: np.ndarray | None = None
    final_obs: np.ndarray | None = None
    final_avail: np.ndarray | None = None
    episode_return: float = 0.0

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def terminated(self) -> bool:
        return bool(self.steps) and bool(self.steps[-1].terminated)

    @property
    def truncated(self) -> bool:
        return bool(self.steps) and bool(self.steps[-1].truncated)

    def validate(self) -> None:
        if not self.steps:
            raise ContractViolation("episode has no steps")
        first = self.steps[0]
        n, a = first.avail.shape
        for i, s in enumerate(self.steps):
            if s.obs.shape != first.obs.shape or s.avail.shape != (n, a):
                raise ContractViolation(f"inconsistent shapes at step {i}")
            if s.state.shape != first.state.shape:
                raise ContractViolation(f"inconsistent state shape at step {i}")
            if s.action.shape != (n,):
                raise ContractViolation(f"bad action shape at step {i}")
            if not np.isfinite(s.reward):
                raise ContractViolation(f"non-finite reward at step {i}")
            ends = s.terminated or s.truncated
            if ends != (i == len(self.steps) - 1):
                raise ContractViolation("episode must end exactly at its last step")
        if self.final_state is None or self.final_obs is None or self.final_avail is None:
            raise ContractViolation("episode is missing its final snapshot")


def _arr2(x: np.ndarray) -> list:
    return [list(map(float, row)) for row in np.asarray(x)]


def _mask2(x: np.ndarray) -> list:
    return [[int(v) for v in row] for row in np.asarray(x)]


def episode_to_obj(ep: EpisodeRecord) -> dict:
    return {
        "seed": int(ep.seed),
        "return": float(ep.episode_return),
        "steps": [
            {
                "state": list(map(float, s.state)),
                "obs": _arr2(s.obs),
                "avail": _mask2(s.avail),
                "action": [int(v) for v in s.action],
                "reward": float(s.reward),
                "terminated": bool(s.terminated),
                "truncated": bool(s.truncated),
            }
            for s in ep.steps
        ],
        "final": {
            "state": list(map(float, ep.final_state)),
            "obs": _arr2(ep.final_obs),
            "avail": _mask2(ep.final_avail),
        },
    }


def episode_from_obj(obj: dict) -> EpisodeRecord:
    steps = [
        StepRecord(
            state=np.array(s["state"], dtype=np.float64),
            obs=np.array(s["obs"], dtype=np.float64),
            avail=np.array(s["avail"], dtype=bool),
            action=np.array(s["action"], dtype=np.int64),
            reward=float(s["reward"]),
            terminated=bool(s["terminated"]),
            truncated=bool(s["truncated"]),
        )
        for s in obj["steps"]
    ]
    fin = obj["final"]
    return EpisodeRecord(
        seed=int(obj["seed"]),
        steps=steps,
        final_state=np.array(fin["state"], dtype=np.float64),
        final_obs=np.array(fin["obs"], dtype=np.float64),
        final_avail=np.array(fin["avail"], dtype=bool),
        episode_return=float(obj["return"]),
    )


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Dataset:
    meta: dict
    episodes: list

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta["format_version"] = DATASET_FORMAT_VERSION
        meta["episodes"] = len(self.episodes)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_dumps(meta) + "\n")
            for ep in self.episodes:
                fh.write(_dumps(episode_to_obj(ep)) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ArtifactError(f"cannot read dataset {path}: {exc}") from exc
        if not lines:
            raise ArtifactError(f"dataset {path} is empty")
        try:
            meta = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"dataset {path}: bad metadata line: {exc}") from exc
        if not isinstance(meta, dict) or "format_version" not in meta:
            raise ArtifactError(f"dataset {path}: first line is not metadata")
        if meta["format_version"] != DATASET_FORMAT_VERSION:
            raise ArtifactError(
                f"dataset {path}: unsupported format version {meta['format_version']}"
            )
        episodes = []
        for i, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            try:
                episodes.append(episode_from_obj(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ArtifactError(f"dataset {path}: bad episode at line {i}: {exc}") from exc
        if meta.get("episodes") not in (None, len(episodes)):
            raise ArtifactError(
                f"dataset {path}: metadata says {meta['episodes']} episodes, "
                f"found {len(episodes)}"
            )
        return cls(meta=meta, episodes=episodes)
