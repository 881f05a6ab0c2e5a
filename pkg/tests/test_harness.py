import numpy as np
import pytest

from marllab import harness
from marllab.config import RunConfig
from marllab.env import GridWorld, MatrixGame
from marllab.episodes import Dataset
from marllab.errors import ArtifactError, ConfigError
from marllab.harness import (METRIC_COLUMNS, MetricsWriter, env_from_config,
                             episode_success, evaluate, load_model,
                             read_metrics, resolve_schedules, save_model,
                             stream)
from marllab.networks import QmixModel


def test_stream_deterministic_and_keyed():
    a = stream(3, 10).integers(0, 1_000_000, size=5)
    b = stream(3, 10).integers(0, 1_000_000, size=5)
    c = stream(3, 20).integers(0, 1_000_000, size=5)
    d = stream(4, 10).integers(0, 1_000_000, size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_env_from_config_matrix_and_gridworld():
    assert isinstance(env_from_config(RunConfig()), MatrixGame)
    cfg = RunConfig({"env.name": "gridworld", "env.grid_size": "5",
                     "env.n_agents": "2", "env.horizon": "12",
                     "env.goals": "0,0;4,4", "env.spawns": "0,2;4,2"})
    env = env_from_config(cfg)
    assert isinstance(env, GridWorld)
    assert env.spec.horizon == 12
    assert env.goals == ((0, 0), (4, 4))
    assert env.spawns == ((0, 2), (4, 2))


def test_env_from_config_bad_cells():
    cfg = RunConfig({"env.name": "gridworld", "env.goals": "0;1"})
    with pytest.raises(ConfigError):
        env_from_config(cfg)


def test_metrics_writer_round_trip(tmp_path):
    path = tmp_path / "metrics.csv"
    w = MetricsWriter(path)
    w.row(step=0, success_rate=1.0, epsilon=0.5)
    w.row(step=10, loss=0.25, lambda_memory=None)
    w.close()
    m = read_metrics(path)
    assert list(m) == list(METRIC_COLUMNS)
    assert m["step"] == [0.0, 10.0]
    assert m["success_rate"] == [1.0, None]
    assert m["loss"] == [None, 0.25]


def test_metrics_writer_rejects_unknown_column(tmp_path):
    w = MetricsWriter(tmp_path / "m.csv")
    with pytest.raises(ConfigError):
        w.row(step=0, win_rate=1.0)
    w.close()


def test_metrics_writer_resume_appends(tmp_path):
    path = tmp_path / "m.csv"
    w = MetricsWriter(path)
    w.row(step=0)
    w.close()
    w = MetricsWriter(path, resume=True)
    w.row(step=5)
    w.close()
    assert read_metrics(path)["step"] == [0.0, 5.0]
    w = MetricsWriter(path, resume=False)  # fresh run truncates
    w.close()
    assert read_metrics(path)["step"] == []


def test_resolve_schedules_autos():
    cfg = RunConfig()
    eps, mem, (start, anneal, mem_anneal) = resolve_schedules(
        cfg, from_scratch=True, env_steps=1000, memory_on=False)
    assert start == 1.0 and anneal == 200 and mem is None
    eps, mem, (start, anneal, mem_anneal) = resolve_schedules(
        cfg, from_scratch=False, env_steps=1000, memory_on=True)
    assert start == 0.3 and mem_anneal == 500
    assert mem.value(0) == 1.0


def test_resolve_schedules_pinned_values_pass_through():
    cfg = RunConfig({"explore.eps_start": "0.7", "explore.anneal_steps": "50",
                     "online.memory_anneal_steps": "80"})
    eps, mem, resolved = resolve_schedules(cfg, False, 1000, True)
    assert resolved == (0.7, 50, 80)
    assert eps.value(0) == pytest.approx(0.7)


def test_model_save_load_round_trip(tmp_path):
    env = MatrixGame()
    cfg = RunConfig()
    net_cfg = harness.net_config_from(env, cfg)
    model = QmixModel(net_cfg, stream(1, 10))
    path = tmp_path / "m.ckpt"
    save_model(path, model, {"kind": "policy", "env": env.fixture_manifest()})
    again, meta = load_model(path)
    assert meta["kind"] == "policy"
    for name, node in model.params.items():
        assert np.array_equal(node.value, again.params[name].value)


def test_load_model_rejects_missing_manifest(tmp_path):
    from marllab import checkpoint
    env = MatrixGame()
    model = QmixModel(harness.net_config_from(env, RunConfig()), stream(1, 10))
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model.params.values_dict(), {"kind": "policy"})
    with pytest.raises(ArtifactError):
        load_model(path)


def test_evaluate_deterministic():
    env = MatrixGame()
    model = QmixModel(harness.net_config_from(env, RunConfig()), stream(1, 10))
    a = evaluate(model, env, 8, master_seed=5, eval_index=0)
    b = evaluate(model, env, 8, master_seed=5, eval_index=0)
    assert a.returns == b.returns
    assert a.success_rate == b.success_rate


def test_episode_success_matrix():
    env = MatrixGame()
    from marllab.env import run_episode
    from marllab.explore import ScriptedPolicy
    good = run_episode(env, ScriptedPolicy([[0, 0]]), stream(0, 0))
    bad = run_episode(env, ScriptedPolicy([[1, 1]]), stream(0, 0))
    assert episode_success(env, good) is True
    assert episode_success(env, bad) is False


# --------------------------------------------------------- pipeline smoke

SCRATCH = {"env.name": "matrix", "online.from_scratch": "true",
           "online.env_steps": "600", "eval.interval": "300",
           "eval.episodes": "8", "explore.eps_start": "0.2",
           "explore.anneal_steps": "200", "run.save_state": "false"}


def test_run_online_scratch_metrics_and_model(tmp_path):
    cfg = RunConfig({**SCRATCH, "seed": "3"})
    out = harness.run_online(cfg, tmp_path / "run")
    m = read_metrics(tmp_path / "run" / "metrics.csv")
    assert m["step"][0] == 0.0 and m["step"][-1] == 600.0
    assert (tmp_path / "run" / "policy.ckpt").exists()
    assert (tmp_path / "run" / "config.txt").exists()
    assert out["env_steps"] == 600
    # logged epsilon matches the closed-form schedule at each eval row
    for step, eps in zip(m["step"], m["epsilon"]):
        expect = max(0.05, 0.2 - (0.2 - 0.05) / 200 * step)
        assert eps == pytest.approx(expect, abs=0.0)


def test_run_online_same_config_reruns_identically(tmp_path):
    cfg = RunConfig({**SCRATCH, "seed": "4"})
    harness.run_online(cfg, tmp_path / "a")
    harness.run_online(cfg.copy(), tmp_path / "b")
    for name in ("metrics.csv", "policy.ckpt", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()


def test_run_online_resume_matches_uninterrupted(tmp_path):
    full = RunConfig({**SCRATCH, "seed": "5", "online.env_steps": "900",
                      "run.save_state": "true"})
    harness.run_online(full, tmp_path / "full")

    part = full.copy()
    part.set("online.env_steps", "600")
    harness.run_online(part, tmp_path / "resumed")
    cont = full.copy()
    cont.set("run.resume", "true")
    harness.run_online(cont, tmp_path / "resumed")

    for name in ("metrics.csv", "policy.ckpt", "runstate.ckpt"):
        assert (tmp_path / "full" / name).read_bytes() == \
               (tmp_path / "resumed" / name).read_bytes(), name


def test_gen_dataset_matrix(tmp_path):
    cfg = RunConfig({"env.name": "matrix", "seed": "7",
                     "dataset.mode": "both", "dataset.episodes": "50",
                     "dataset.behavior_eps": "0.2", "dataset.threshold": "0.5",
                     "dataset.max_env_steps": "4000", "eval.interval": "500",
                     "eval.episodes": "8", "explore.eps_start": "0.2"})
    out = harness.run_gen_dataset(cfg, tmp_path / "ds")
    med = Dataset.load(tmp_path / "ds" / "medium.jsonl")
    rep = Dataset.load(tmp_path / "ds" / "medium_replay.jsonl")
    assert len(med.episodes) == 50
    assert len(rep.episodes) > 0          # behavior buffer was non-empty
    assert med.meta["mode"] == "medium"
    assert rep.meta["mode"] == "medium-replay"
    assert med.meta["behavior_epsilon"] == pytest.approx(0.2)
    assert med.meta["env"]["name"] == "matrix"
    assert out["threshold"] == pytest.approx(0.5 * 8.0)
    # the behavior policy really trained: crossing at step 0 is excluded
    assert out["behavior_env_steps"] > 0


def test_pretrain_then_finetune(tmp_path):
    gen = RunConfig({"env.name": "matrix", "seed": "7",
                     "dataset.mode": "medium", "dataset.episodes": "80",
                     "dataset.behavior_eps": "0.2", "dataset.threshold": "0.5",
                     "dataset.max_env_steps": "4000", "eval.interval": "500",
                     "eval.episodes": "8", "explore.eps_start": "0.2"})
    harness.run_gen_dataset(gen, tmp_path / "ds")

    pre = RunConfig({"env.name": "matrix", "seed": "8",
                     "offline.dataset": str(tmp_path / "ds" / "medium.jsonl"),
                     "offline.steps": "300", "offline.eval_interval": "150",
                     "eval.episodes": "8"})
    harness.run_pretrain(pre, tmp_path / "pre")
    assert (tmp_path / "pre" / "policy.ckpt").exists()
    assert (tmp_path / "pre" / "target.ckpt").exists()

    ft = RunConfig({"env.name": "matrix", "seed": "9",
                    "run.artifacts": str(tmp_path / "pre"),
                    "online.env_steps": "400", "eval.interval": "200",
                    "eval.episodes": "8", "online.memory": "true",
                    "run.save_state": "false"})
    out = harness.run_online(ft, tmp_path / "ft")
    m = read_metrics(tmp_path / "ft" / "metrics.csv")
    lam = [v for v in m["lambda_memory"] if v is not None]
    assert lam and lam[0] == 1.0          # lambda starts at exactly 1
    assert out["final_eval"].success_rate >= 0.0


def test_pretrain_env_mismatch_rejected(tmp_path):
    gen = RunConfig({"env.name": "matrix", "seed": "7",
                     "dataset.mode": "medium", "dataset.episodes": "20",
                     "dataset.behavior_eps": "0.2", "dataset.threshold": "0.5",
                     "dataset.max_env_steps": "4000", "eval.interval": "500",
                     "eval.episodes": "8", "explore.eps_start": "0.2"})
    harness.run_gen_dataset(gen, tmp_path / "ds")
    pre = RunConfig({"env.name": "gridworld",
                     "offline.dataset": str(tmp_path / "ds" / "medium.jsonl"),
                     "offline.steps": "10"})
    with pytest.raises(ConfigError):
        harness.run_pretrain(pre, tmp_path / "pre")


def test_finetune_requires_artifacts(tmp_path):
    cfg = RunConfig({"env.name": "matrix", "online.env_steps": "100"})
    with pytest.raises((ConfigError, ArtifactError)):
        harness.run_online(cfg, tmp_path / "ft")
