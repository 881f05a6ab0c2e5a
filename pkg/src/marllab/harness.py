"""Phase runners: pretraining, online fine-tuning, dataset generation,
and the value-retention diagnostic.

Determinism contract
--------------------
Every run derives its randomness from the master seed through fixed,
documented streams (PCG64 seeded by (seed, purpose) tuples):

  (seed, 10)            network initialization
  (seed, 20)            training rollouts / exploration
  (seed, 30)            learner (batch sampling, comparison actions)
  (seed, 40)            dataset rollouts
  (seed, 50)            probe rollouts for the diagnostic
  (seed, 777, k)        the k-th evaluation (fresh stream per eval)

Within one learner update the batch indices are drawn before the
update's own draws.  Evaluations never touch the training streams or
the step clock, so adding or removing an eval row cannot change the
trajectory of training.

metrics.csv schema (fixed): step, episode_return_mean, success_rate,
epsilon, lambda_memory, loss, q_probe_mean, mem_branch_fraction.
Offline runs count `step` in gradient updates, online runs in
environment steps; columns that do not apply to a row are left blank.
Resumable state is written next to the metrics at every eval row, at
which point the loss accumulators are freshly cleared, so a resumed
run replays the exact tail of an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, qlearn
from .config import AUTO, RunConfig
from .env import GridWorld, MatrixGame, StepClock, run_episode
from .episodes import Dataset
from .errors import ArtifactError, ConfigError
from .explore import SELECTORS, QPolicy
from .networks import NetConfig, QmixModel, config_from_manifest
from .offline import LearnerSettings, OfflineLearner
from .online import OnlineLearner
from .oracle import oracle_optimal_return, solve_matrix_game
from .replay import Batch, MixingRatioSampler, ReplayBuffer, batch_from_episodes
from .schedules import LinearSchedule

METRIC_COLUMNS = ("step", "episode_return_mean", "success_rate", "epsilon",
                  "lambda_memory", "loss", "q_probe_mean",
                  "mem_branch_fraction")


def stream(master_seed: int, *key) -> np.random.Generator:
    """Named rng stream; stable under code changes elsewhere."""
    seq = np.random.SeedSequence((int(master_seed),) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


# ---------------------------------------------------------------- fixtures

def _parse_cells(raw: str, key: str):
    cells = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            r, c = part.split(",")
            cells.append((int(r), int(c)))
        except ValueError:
            raise ConfigError(f"{key}: expected 'r,c;r,c;...', got {raw!r}")
    return cells or None


def env_from_config(cfg: RunConfig):
    name = cfg["env.name"]
    if name == "matrix":
        return MatrixGame()
    if name == "gridworld":
        return GridWorld(grid_size=cfg["env.grid_size"],
                         n_agents=cfg["env.n_agents"],
                         goals=_parse_cells(cfg["env.goals"], "env.goals"),
                         spawns=_parse_cells(cfg["env.spawns"], "env.spawns"),
                         horizon=cfg["env.horizon"])
    raise ConfigError(f"unknown env.name {name!r}")


def env_from_manifest(man: dict):
    name = man.get("name")
    if name == "matrix":
        return MatrixGame(payoff=np.asarray(man["payoff"], dtype=np.float64))
    if name == "gridworld":
        return GridWorld(grid_size=man["grid_size"], n_agents=man["n_agents"],
                         goals=[tuple(g) for g in man["goals"]],
                         spawns=[tuple(s) for s in man["spawns"]],
                         horizon=man["horizon"], discount=man["discount"])
    raise ArtifactError(f"unknown env manifest {man!r}")


def net_config_from(env, cfg: RunConfig) -> NetConfig:
    spec = env.spec
    return NetConfig(
        n_agents=spec.n_agents, obs_dim=spec.obs_dim,
        action_dim=spec.action_dim, state_dim=spec.state_dim,
        hidden_dim=cfg["net.hidden_dim"],
        mixing_hidden_dim=cfg["net.mixing_hidden_dim"],
        hyper_hidden_dim=cfg["net.hyper_hidden_dim"],
        history_len=cfg["net.history_len"],
        append_agent_id=cfg["net.agent_id_onehot"])


def learner_settings(cfg: RunConfig, env, phase: str) -> LearnerSettings:
    return LearnerSettings(
        gamma=env.spec.discount, lr=cfg["opt.lr"],
        adam_beta1=cfg["opt.beta1"], adam_beta2=cfg["opt.beta2"],
        adam_eps=cfg["opt.eps"], target_sync=cfg[f"{phase}.target_sync"],
        cql_weight=cfg[f"{phase}.cql_weight"],
        mu_samples=cfg["offline.mu_samples"], mu_mode=cfg["offline.mu_mode"],
        mu_temperature=cfg["offline.mu_temperature"])


# ------------------------------------------------------------ checkpoints

def save_model(path, model: QmixModel, meta: dict) -> None:
    meta = dict(meta)
    meta["arch"] = model.cfg.manifest()
    checkpoint.save(path, model.params.values_dict(), meta)


def load_model(path) -> tuple[QmixModel, dict]:
    tensors, meta = checkpoint.load(path)
    if not meta or "arch" not in meta:
        raise ArtifactError(f"{path}: missing architecture manifest")
    model = QmixModel(config_from_manifest(meta["arch"]))
    model.params.load_values(tensors)
    return model, meta


def _check_compatible(meta: dict, env, net_cfg: NetConfig, source: str) -> None:
    if meta.get("env") != env.fixture_manifest():
        raise ConfigError(f"{source}: env fixture does not match the config")
    if meta.get("arch") != net_cfg.manifest():
        raise ConfigError(f"{source}: network architecture does not match the config")


# ---------------------------------------------------------------- metrics

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Append-only CSV with the fixed schema above."""

    def __init__(self, path, resume: bool = False):
        self.path = Path(path)
        fresh = not (resume and self.path.exists())
        self._fh = open(self.path, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            self._fh.write(",".join(METRIC_COLUMNS) + "\n")
            self._fh.flush()

    def row(self, **cells) -> None:
        unknown = set(cells) - set(METRIC_COLUMNS)
        if unknown:
            raise ConfigError(f"unknown metric columns {sorted(unknown)}")
        self._fh.write(",".join(_fmt(cells.get(c)) for c in METRIC_COLUMNS) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_metrics(path) -> dict:
    """Column -> list of float-or-None from a metrics.csv."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    out = {c: [] for c in header}
    for line in lines[1:]:
        for col, cell in zip(header, line.split(",")):
            out[col].append(float(cell) if cell else None)
    return out


# ------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    mean_return: float
    success_rate: float
    returns: list


def episode_success(env, episode) -> bool:
    """Matrix: the oracle-optimal joint action was played.
    Gridworld: the episode ended by reaching the goal configuration."""
    if isinstance(env, MatrixGame):
        best = solve_matrix_game(env).optimal_joint_policy[0]
        return tuple(int(a) for a in episode.steps[0].action) == best
    return episode.terminated


def evaluate(model: QmixModel, env, n_episodes: int, master_seed: int,
             eval_index: int) -> EvalResult:
    rng = stream(master_seed, 777, eval_index)
    policy = QPolicy(model, mode="independent", epsilon=0.0)
    returns, hits = [], 0
    for i in range(n_episodes):
        ep = run_episode(env, policy, rng, seed=i)
        returns.append(ep.episode_return)
        hits += int(episode_success(env, ep))
    return EvalResult(mean_return=float(np.mean(returns)),
                      success_rate=hits / n_episodes, returns=returns)


def probe_value_mean(model: QmixModel, batch: Batch) -> float:
    """Mean logged team value over the frozen probe transitions."""
    vals = qlearn.logged_team_values(model, batch)
    return float((vals * batch.valid).sum() / batch.valid.sum())


# ------------------------------------------------------------- schedules

def resolve_schedules(cfg: RunConfig, from_scratch: bool, env_steps: int,
                      memory_on: bool):
    """Fill auto values; returns (eps_schedule, memory_schedule|None,
    resolved (start, anneal, mem_anneal)) for the config snapshot."""
    literal = cfg["fidelity.literal_schedules"]
    eps_start = cfg["explore.eps_start"]
    if eps_start == AUTO:
        eps_start = 1.0 if from_scratch else 0.3
    anneal = cfg["explore.anneal_steps"]
    if anneal == AUTO:
        anneal = max(1, env_steps // 5)
    eps = LinearSchedule(eps_start, cfg["explore.eps_end"], anneal,
                         literal=literal)
    mem_anneal = cfg["online.memory_anneal_steps"]
    if mem_anneal == AUTO:
        mem_anneal = max(1, env_steps // 2)
    mem = None
    if memory_on:
        mem = LinearSchedule(1.0, cfg["online.memory_end"], mem_anneal,
                             literal=literal)
    return eps, mem, (eps_start, anneal, mem_anneal)


def _snapshot_config(cfg: RunConfig, out: Path, resolved=None) -> None:
    snap = cfg.copy()
    if resolved is not None:
        eps_start, anneal, mem_anneal = resolved
        snap.set("explore.eps_start", repr(eps_start))
        snap.set("explore.anneal_steps", str(anneal))
        snap.set("online.memory_anneal_steps", str(mem_anneal))
    (out / "config.txt").write_text(snap.dump(), encoding="utf-8")


# ------------------------------------------------------------ pretraining

def run_pretrain(cfg: RunConfig, out_dir) -> dict:
    """Conservative value training on a fixed dataset; writes policy.ckpt,
    target.ckpt, metrics.csv, and the config snapshot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    path = cfg["offline.dataset"]
    if not path:
        raise ConfigError("pretraining requires offline.dataset")
    ds = Dataset.load(path)
    if "env" not in ds.meta:
        raise ArtifactError(f"{path}: dataset has no env manifest")
    env = env_from_manifest(ds.meta["env"])
    if env.name != cfg["env.name"]:
        raise ConfigError(
            f"config env.name={cfg['env.name']!r} but the dataset holds "
            f"{env.name!r} episodes")
    net_cfg = net_config_from(env, cfg)
    model = QmixModel(net_cfg, stream(seed, 10))
    learner = OfflineLearner(model, learner_settings(cfg, env, "offline"))
    lrng = stream(seed, 30)
    episodes = ds.episodes
    if not episodes:
        raise ArtifactError(f"{path}: dataset is empty")

    writer = MetricsWriter(out / "metrics.csv")
    n_eval = cfg["eval.episodes"]
    res = evaluate(model, env, n_eval, seed, 0)
    writer.row(step=0, episode_return_mean=res.mean_return,
               success_rate=res.success_rate)
    eval_index = 1
    interval = cfg["offline.eval_interval"]
    batch_size = cfg["offline.batch_size"]
    steps = cfg["offline.steps"]
    losses = []
    for step in range(1, steps + 1):
        idx = lrng.integers(0, len(episodes), size=batch_size)
        batch = batch_from_episodes([episodes[i] for i in idx], net_cfg)
        m = learner.update(batch, lrng)
        losses.append(m["loss"])
        if step % interval == 0 or step == steps:
            res = evaluate(model, env, n_eval, seed, eval_index)
            eval_index += 1
            writer.row(step=step, episode_return_mean=res.mean_return,
                       success_rate=res.success_rate,
                       loss=float(np.mean(losses)))
            losses = []
    writer.close()

    meta = {"kind": "policy", "env": env.fixture_manifest(), "seed": seed,
            "updates": learner.update_count, "phase": "offline",
            "dataset_sha256": checkpoint.file_sha256(path)}
    save_model(out / "policy.ckpt", model, meta)
    save_model(out / "target.ckpt", learner.pair.target,
               {**meta, "kind": "target"})
    _snapshot_config(cfg, out)
    return {"out_dir": str(out), "final_eval": res, "model": model,
            "updates": learner.update_count}


# ---------------------------------------------------------- online phase

def _save_runstate(out: Path, learner: OnlineLearner, buffer: ReplayBuffer,
                   state: dict, probe_rows: list, env, seed: int) -> None:
    tensors = {}
    for name, arr in learner.model.params.values_dict().items():
        tensors[f"live.{name}"] = arr
    for name, arr in learner.pair.target.params.values_dict().items():
        tensors[f"target.{name}"] = arr
    for name, arr in learner.opt.state_tensors().items():
        tensors[f"adam.{name}"] = arr
    meta = {"kind": "runstate", "seed": seed,
            "env": env.fixture_manifest(),
            "arch": learner.model.cfg.manifest(),
            "adam_step": learner.opt.step_count,
            "update_count": learner.update_count,
            "probe_rows": probe_rows, **state}
    checkpoint.save(out / "runstate.ckpt", tensors, meta)
    Dataset({"kind": "buffer", "insertion_count": buffer.insertion_count},
            buffer.episodes()).save(out / "buffer.jsonl")


def _load_runstate(out: Path, learner: OnlineLearner, buffer: ReplayBuffer,
                   env, net_cfg: NetConfig) -> dict:
    path = out / "runstate.ckpt"
    if not path.exists():
        raise ArtifactError(f"resume requested but {path} does not exist")
    tensors, meta = checkpoint.load(path)
    if meta is None or meta.get("kind") != "runstate":
        raise ArtifactError(f"{path}: not a runstate checkpoint")
    _check_compatible(meta, env, net_cfg, str(path))
    live = {k[len("live."):]: v for k, v in tensors.items()
            if k.startswith("live.")}
    target = {k[len("target."):]: v for k, v in tensors.items()
              if k.startswith("target.")}
    adam = {k[len("adam."):]: v for k, v in tensors.items()
            if k.startswith("adam.")}
    learner.model.params.load_values(live)
    learner.pair.target.params.load_values(target)
    learner.opt.load_state_tensors(adam, meta["adam_step"])
    learner.update_count = int(meta["update_count"])
    for ep in Dataset.load(out / "buffer.jsonl").episodes:
        buffer.add(ep)
    return meta


def _restore_rng(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def run_online(cfg: RunConfig, out_dir, probe: tuple | None = None,
               stop_at_return: float | None = None) -> dict:
    """Environment-interaction phase: fine-tuning or from-scratch training.

    probe, when given, is (batch, interval): every `interval` updates the
    mean team value over the frozen probe batch is recorded.
    stop_at_return ends the run at the first evaluation whose mean return
    reaches the threshold (used by dataset generation).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    scratch = cfg["online.from_scratch"]
    resume = cfg["run.resume"]
    env = env_from_config(cfg)
    net_cfg = net_config_from(env, cfg)
    env_steps = cfg["online.env_steps"]
    memory_on = cfg["online.memory"] and not scratch

    offline_model = None
    if scratch:
        model = QmixModel(net_cfg, stream(seed, 10))
    else:
        artifacts = cfg["run.artifacts"]
        if not artifacts:
            raise ConfigError("fine-tuning requires run.artifacts "
                              "(or online.from_scratch=true)")
        ckpt = Path(artifacts) / "policy.ckpt"
        model, meta = load_model(ckpt)
        _check_compatible(meta, env, net_cfg, str(ckpt))
        if memory_on:
            offline_model, _ = load_model(ckpt)

    learner = OnlineLearner(model, learner_settings(cfg, env, "online"),
                            offline_model)
    eps_sched, mem_sched, resolved = resolve_schedules(
        cfg, scratch, env_steps, memory_on)

    buffer = ReplayBuffer(cfg["replay.capacity"])
    ratio = cfg["online.mixing_ratio"]
    offline_eps = []
    if ratio > 0.0:
        path = cfg["offline.dataset"]
        if not path:
            raise ConfigError("online.mixing_ratio > 0 requires offline.dataset")
        offline_eps = Dataset.load(path).episodes
    sampler = MixingRatioSampler(ratio, offline_eps, buffer)

    clock = StepClock()
    rollout_rng = stream(seed, 20)
    lrng = stream(seed, 30)
    policy = QPolicy(model, mode=cfg["explore.mode"], schedule=eps_sched,
                     clock=clock)

    interval = cfg["eval.interval"]
    n_eval = cfg["eval.episodes"]
    warmup = cfg["online.warmup_episodes"]
    updates_per_episode = cfg["online.updates_per_episode"]
    batch_size = cfg["online.batch_size"]
    save_state = cfg["run.save_state"]

    probe_rows: list = []
    episode_count = 0
    eval_index = 0
    next_eval = interval
    last_row_step = -1
    stopped = False
    res = None

    def lam_now() -> float:
        return mem_sched.value(clock.t) if mem_sched is not None else 0.0

    if resume:
        meta = _load_runstate(out, learner, buffer, env, net_cfg)
        clock.t = int(meta["clock_t"])
        episode_count = int(meta["episode_count"])
        eval_index = int(meta["eval_index"])
        next_eval = int(meta["next_eval"])
        last_row_step = int(meta["last_row_step"])
        probe_rows = list(meta["probe_rows"])
        _restore_rng(rollout_rng, meta["rng_rollout"])
        _restore_rng(lrng, meta["rng_learner"])
    writer = MetricsWriter(out / "metrics.csv", resume=resume)
    if not resume:
        res = evaluate(model, env, n_eval, seed, eval_index)
        eval_index += 1
        writer.row(step=0, episode_return_mean=res.mean_return,
                   success_rate=res.success_rate,
                   epsilon=eps_sched.value(0), lambda_memory=lam_now())
        last_row_step = 0
        # the stop threshold only applies to trained checkpoints, so the
        # step-0 row is never a stopping point (the buffer is still empty)

    losses: list = []
    memfracs: list = []
    last_probe = probe_rows[-1]["q"] if probe_rows else None

    def runstate() -> dict:
        return {"clock_t": clock.t, "episode_count": episode_count,
                "eval_index": eval_index, "next_eval": next_eval,
                "last_row_step": last_row_step,
                "rng_rollout": rollout_rng.bit_generator.state,
                "rng_learner": lrng.bit_generator.state}

    def eval_row() -> EvalResult:
        nonlocal eval_index, last_row_step
        r = evaluate(model, env, n_eval, seed, eval_index)
        eval_index += 1
        writer.row(step=clock.t, episode_return_mean=r.mean_return,
                   success_rate=r.success_rate,
                   epsilon=eps_sched.value(clock.t), lambda_memory=lam_now(),
                   loss=float(np.mean(losses)) if losses else None,
                   q_probe_mean=last_probe,
                   mem_branch_fraction=float(np.mean(memfracs)) if memfracs
                   else None)
        losses.clear()
        memfracs.clear()
        last_row_step = clock.t
        return r

    while clock.t < env_steps and not stopped:
        ep = run_episode(env, policy, rollout_rng, seed=episode_count,
                         clock=clock)
        episode_count += 1
        buffer.add(ep)
        if len(buffer) >= warmup:
            for _ in range(updates_per_episode):
                episodes = sampler.sample(lrng, batch_size)
                batch = batch_from_episodes(episodes, net_cfg)
                m = learner.update(batch, lam_now(), lrng)
                losses.append(m["loss"])
                if m["memory_branch_fraction"] is not None:
                    memfracs.append(m["memory_branch_fraction"])
                if probe is not None and \
                        learner.update_count % probe[1] == 0:
                    last_probe = probe_value_mean(model, probe[0])
                    probe_rows.append({"update": learner.update_count,
                                       "env_step": clock.t, "q": last_probe})
        if clock.t >= next_eval:
            res = eval_row()
            next_eval = clock.t - (clock.t % interval) + interval
            if save_state:
                _save_runstate(out, learner, buffer, runstate(), probe_rows,
                               env, seed)
            if stop_at_return is not None and res.mean_return >= stop_at_return:
                stopped = True

    if last_row_step != clock.t or res is None:
        res = eval_row()
    writer.close()

    meta = {"kind": "policy", "env": env.fixture_manifest(), "seed": seed,
            "updates": learner.update_count, "phase": "online",
            "env_steps": clock.t}
    save_model(out / "policy.ckpt", model, meta)
    save_model(out / "target.ckpt", learner.pair.target,
               {**meta, "kind": "target"})
    if save_state:
        _save_runstate(out, learner, buffer, runstate(), probe_rows, env, seed)
    _snapshot_config(cfg, out, resolved)
    return {"out_dir": str(out), "final_eval": res, "model": model,
            "buffer": buffer, "probe_rows": probe_rows,
            "env_steps": clock.t, "episodes": episode_count,
            "updates": learner.update_count, "stopped_early": stopped}


# ------------------------------------------------------ dataset creation

def run_gen_dataset(cfg: RunConfig, out_dir) -> dict:
    """Train a behavior policy from scratch until it first clears the
    return threshold, then export datasets.

    medium: fresh rollouts from that checkpoint at a small fixed
    exploration rate.  medium-replay: everything the behavior run kept
    in its buffer up to the checkpoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    mode = cfg["dataset.mode"]
    if mode not in ("medium", "medium-replay", "both"):
        raise ConfigError(f"unknown dataset.mode {mode!r}")
    env = env_from_config(cfg)
    optimum = oracle_optimal_return(env)
    if optimum <= 0.0:
        raise ConfigError("the return threshold needs a positive oracle optimum")
    threshold = cfg["dataset.threshold"] * optimum

    behavior_cfg = cfg.copy()
    behavior_cfg.set("online.from_scratch", "true")
    behavior_cfg.set("online.memory", "false")
    behavior_cfg.set("run.resume", "false")
    behavior_cfg.set("online.mixing_ratio", "0.0")
    behavior_cfg.set("online.env_steps", str(cfg["dataset.max_env_steps"]))
    summary = run_online(behavior_cfg, out / "behavior",
                         stop_at_return=threshold)
    if not summary["stopped_early"]:
        raise ArtifactError(
            f"behavior run never reached {threshold:.3f} "
            f"({cfg['dataset.threshold']:.0%} of the oracle optimum "
            f"{optimum:.3f}) within {cfg['dataset.max_env_steps']} env steps")

    model = summary["model"]
    ckpt_hash = checkpoint.file_sha256(out / "behavior" / "policy.ckpt")
    spec = env.spec
    base_meta = {
        "env": env.fixture_manifest(),
        "dims": {"n_agents": spec.n_agents, "obs_dim": spec.obs_dim,
                 "action_dim": spec.action_dim, "state_dim": spec.state_dim,
                 "horizon": spec.horizon, "discount": spec.discount},
        "behavior_checkpoint_sha256": ckpt_hash,
        "explore_mode": cfg["explore.mode"], "seed": seed,
        "threshold_return": threshold,
        "checkpoint_eval_return": summary["final_eval"].mean_return,
    }
    paths = {}
    if mode in ("medium", "both"):
        eps = cfg["dataset.behavior_eps"]
        policy = QPolicy(model, mode=cfg["explore.mode"], epsilon=eps)
        rng = stream(seed, 40)
        episodes = [run_episode(env, policy, rng, seed=i)
                    for i in range(cfg["dataset.episodes"])]
        meta = {**base_meta, "mode": "medium", "behavior_epsilon": eps}
        path = out / "medium.jsonl"
        Dataset(meta, episodes).save(path)
        paths["medium"] = str(path)
    if mode in ("medium-replay", "both"):
        episodes = summary["buffer"].episodes()
        meta = {**base_meta, "mode": "medium-replay", "behavior_epsilon": None}
        path = out / "medium_replay.jsonl"
        Dataset(meta, episodes).save(path)
        paths["medium-replay"] = str(path)
    _snapshot_config(cfg, out)
    return {"out_dir": str(out), "paths": paths,
            "behavior_eval_return": summary["final_eval"].mean_return,
            "behavior_env_steps": summary["env_steps"],
            "threshold": threshold}


# -------------------------------------------------------------- diagnostic

def parse_arms(spec: str) -> list:
    """'memory,td' or 'memory:sequential_dec,td:independent' ->
    [(token, memory_on, mode_override_or_None), ...]"""
    arms = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        base, _, mode = token.partition(":")
        if base not in ("memory", "td"):
            raise ConfigError(f"arm {token!r}: expected 'memory' or 'td'")
        if mode and mode not in SELECTORS:
            raise ConfigError(f"arm {token!r}: unknown exploration mode")
        arms.append((token, base == "memory", mode or None))
    if not arms:
        raise ConfigError("diag.arms is empty")
    return arms


def run_diagnose(cfg: RunConfig, out_dir) -> dict:
    """Value-retention comparison across fine-tuning arms.

    A probe set of greedy rollouts from the pretrained policy is frozen
    once; each arm fine-tunes from the same checkpoint with the same
    seed and logs the mean team value on the probe set every few
    updates.  Arms differ only in whether the memory target is on and,
    optionally, in the exploration mode.  'td' arms are the
    plain-TD baseline by definition: they also force the online
    conservative weight to zero, so online.cql_weight in the shared
    config applies to 'memory' arms only.  Writes qcurve.csv plus one
    run directory per arm.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    artifacts = cfg["run.artifacts"]
    if not artifacts:
        raise ConfigError("the diagnostic requires run.artifacts")
    env = env_from_config(cfg)
    net_cfg = net_config_from(env, cfg)
    ckpt = Path(artifacts) / "policy.ckpt"
    pre_model, meta = load_model(ckpt)
    _check_compatible(meta, env, net_cfg, str(ckpt))

    rng = stream(seed, 50)
    policy = QPolicy(pre_model, mode="independent", epsilon=0.0)
    probe_eps = [run_episode(env, policy, rng, seed=i)
                 for i in range(cfg["diag.probe_episodes"])]
    probe_batch = batch_from_episodes(probe_eps, net_cfg)

    arms = parse_arms(cfg["diag.arms"])
    curves = {}
    dirs = {}
    for token, memory_on, mode in arms:
        arm_cfg = cfg.copy()
        arm_cfg.set("online.memory", "true" if memory_on else "false")
        arm_cfg.set("online.from_scratch", "false")
        arm_cfg.set("run.resume", "false")
        if not memory_on:
            arm_cfg.set("online.cql_weight", "0.0")
        if mode is not None:
            arm_cfg.set("explore.mode", mode)
        arm_dir = out / ("arm-" + token.replace(":", "-"))
        summary = run_online(arm_cfg, arm_dir,
                             probe=(probe_batch, cfg["diag.probe_interval"]))
        curves[token] = summary["probe_rows"]
        dirs[token] = str(arm_dir)

    qpath = out / "qcurve.csv"
    with open(qpath, "w", encoding="utf-8") as fh:
        header = ["update"]
        for token, _, _ in arms:
            header += [f"{token}:env_step", f"{token}:q"]
        fh.write(",".join(header) + "\n")
        updates = sorted({row["update"] for rows in curves.values()
                          for row in rows})
        by_update = {token: {r["update"]: r for r in rows}
                     for token, rows in curves.items()}
        for u in updates:
            cells = [str(u)]
            for token, _, _ in arms:
                row = by_update[token].get(u)
                cells += ["" if row is None else str(row["env_step"]),
                          "" if row is None else repr(row["q"])]
            fh.write(",".join(cells) + "\n")
    _snapshot_config(cfg, out)
    return {"out_dir": str(out), "curves": curves, "arm_dirs": dirs,
            "qcurve_path": str(qpath),
            "probe_baseline": probe_value_mean(pre_model, probe_batch)}
