"""Flat key=value run configuration with a typed key registry.

Config files hold one `key=value` per line; blank lines and lines
starting with '#' are ignored.  Unknown keys are rejected, every key
has a typed default, and the effective config can be dumped in a
canonical form (sorted keys) for the output-directory snapshot.

Keys whose default is listed as "auto" resolve at phase start:
explore.eps_start becomes 1.0 when training from scratch and 0.3 when
fine-tuning, explore.anneal_steps becomes 20% of the phase's env steps,
and online.memory_anneal_steps becomes 50% of them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

AUTO = -1  # sentinel for derived defaults


@dataclass(frozen=True)
class Key:
    name: str
    kind: str       # int | float | bool | str
    default: object
    help: str


REGISTRY = [
    Key("seed", "int", 0, "master seed; all rng streams derive from it"),
    Key("env.name", "str", "matrix", "fixture: matrix | gridworld"),
    Key("env.grid_size", "int", 7, "gridworld side length"),
    Key("env.n_agents", "int", 4, "gridworld agent count"),
    Key("env.horizon", "int", 40, "gridworld episode cap in steps"),
    Key("env.goals", "str", "", "goal cells 'r,c;r,c;...' (empty: default layout)"),
    Key("env.spawns", "str", "", "spawn cells 'r,c;...', one per agent "
        "(empty: default layout)"),

    Key("net.hidden_dim", "int", 64, "agent MLP hidden width"),
    Key("net.mixing_hidden_dim", "int", 32, "mixer embedding width"),
    Key("net.hyper_hidden_dim", "int", 64, "hypernetwork hidden width"),
    Key("net.history_len", "int", 1, "observation/action window length"),
    Key("net.agent_id_onehot", "bool", True, "append one-hot agent ids to inputs"),

    Key("opt.lr", "float", 5e-4, "Adam learning rate"),
    Key("opt.beta1", "float", 0.9, "Adam first-moment decay"),
    Key("opt.beta2", "float", 0.999, "Adam second-moment decay"),
    Key("opt.eps", "float", 1e-8, "Adam denominator epsilon"),

    Key("offline.dataset", "str", "", "path to the training dataset (jsonl)"),
    Key("offline.steps", "int", 2000, "offline gradient updates"),
    Key("offline.batch_size", "int", 32, "episodes per offline batch"),
    Key("offline.cql_weight", "float", 1.0, "conservative gap weight alpha"),
    Key("offline.mu_mode", "str", "uniform", "comparison actions: uniform | softmax"),
    Key("offline.mu_samples", "int", 4, "sampled comparison actions per step"),
    Key("offline.mu_temperature", "float", 1.0, "softmax temperature for mu"),
    Key("offline.target_sync", "int", 200, "updates between hard target syncs"),
    Key("offline.eval_interval", "int", 200, "updates between offline eval rows"),

    Key("online.env_steps", "int", 50_000, "environment steps in the online phase"),
    Key("online.batch_size", "int", 32, "episodes per online batch"),
    Key("online.mixing_ratio", "float", 0.0,
        "offline fraction per batch (round-half-to-even of ratio*batch)"),
    Key("online.cql_weight", "float", 0.0, "conservative weight during fine-tuning"),
    Key("online.memory", "bool", True, "regress on the frozen-value memory target"),
    Key("online.memory_end", "float", 0.2, "final memory weight after annealing"),
    Key("online.memory_anneal_steps", "int", AUTO,
        "env steps to anneal the memory weight (auto: 50% of env steps)"),
    Key("online.from_scratch", "bool", False, "ignore artifacts; fresh networks"),
    Key("online.warmup_episodes", "int", 32, "episodes buffered before updates"),
    Key("online.updates_per_episode", "int", 1, "gradient updates per episode"),
    Key("online.target_sync", "int", 200, "updates between hard target syncs"),

    Key("replay.capacity", "int", 5000, "replay buffer capacity in episodes"),

    Key("explore.mode", "str", "independent",
        "independent | sequential | sequential_dec"),
    Key("explore.eps_start", "float", AUTO,
        "initial exploration rate (auto: 1.0 scratch, 0.3 fine-tune)"),
    Key("explore.eps_end", "float", 0.05, "final exploration rate"),
    Key("explore.anneal_steps", "int", AUTO,
        "env steps to anneal epsilon (auto: 20% of env steps)"),

    Key("eval.interval", "int", 2000, "env steps between online eval rows"),
    Key("eval.episodes", "int", 64, "greedy episodes per evaluation"),

    Key("dataset.mode", "str", "both", "which files gen-dataset writes: "
        "medium | medium-replay | both"),
    Key("dataset.episodes", "int", 500, "episodes in the medium dataset"),
    Key("dataset.behavior_eps", "float", 0.05, "exploration rate for medium rollouts"),
    Key("dataset.threshold", "float", 0.5,
        "fraction of the oracle optimum that defines the medium checkpoint"),
    Key("dataset.max_env_steps", "int", 60_000, "cap for the scratch data run"),

    Key("run.artifacts", "str", "", "directory holding pretrained artifacts"),
    Key("run.save_state", "bool", True, "write a resumable state at eval points"),
    Key("run.resume", "bool", False, "continue from runstate.ckpt in the out dir"),

    Key("diag.arms", "str", "memory,td",
        "comma list of arms, each 'memory' or 'td' with optional ':mode'"),
    Key("diag.probe_episodes", "int", 64, "greedy episodes frozen into the probe set"),
    Key("diag.probe_interval", "int", 10, "updates between probe-value rows"),

    Key("fidelity.literal_schedules", "bool", False,
        "use the published min-form schedules verbatim (constant-end)"),
]

_BY_NAME = {k.name: k for k in REGISTRY}


def _parse(kind: str, raw, name: str):
    if kind == "int":
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected int, got {raw!r}")
    if kind == "float":
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected float, got {raw!r}")
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("true", "1", "yes", "on"):
            return True
        if s in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected bool, got {raw!r}")
    return str(raw)


def _format(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


class RunConfig:
    """Typed view over the flat key space."""

    def __init__(self, values: dict | None = None):
        self._values = {k.name: k.default for k in REGISTRY}
        if values:
            for name, raw in values.items():
                self.set(name, raw)

    def set(self, name: str, raw) -> None:
        key = _BY_NAME.get(name)
        if key is None:
            raise ConfigError(f"unknown config key {name!r}")
        self._values[name] = _parse(key.kind, raw, name)

    def get(self, name: str):
        if name not in _BY_NAME:
            raise ConfigError(f"unknown config key {name!r}")
        return self._values[name]

    def __getitem__(self, name: str):
        return self.get(name)

    def copy(self) -> "RunConfig":
        out = RunConfig()
        out._values = dict(self._values)
        return out

    def dump(self) -> str:
        lines = []
        for name in sorted(self._values):
            kind = _BY_NAME[name].kind
            lines.append(f"{name}={_format(kind, self._values[name])}")
        return "\n".join(lines) + "\n"


def parse_config_file(path) -> dict:
    """Raw key -> string dict from a key=value file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for ln, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {stripped!r}")
        name, raw = stripped.split("=", 1)
        name = name.strip()
        if name in out:
            raise ConfigError(f"{path}:{ln}: duplicate key {name!r}")
        out[name] = raw.strip()
    return out


def build_config(path=None, overrides=(), seed=None) -> RunConfig:
    """File values override defaults; --override pairs override the file."""
    cfg = RunConfig()
    if path is not None:
        for name, raw in parse_config_file(path).items():
            cfg.set(name, raw)
    for pair in overrides:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        name, raw = pair.split("=", 1)
        cfg.set(name.strip(), raw.strip())
    if seed is not None:
        cfg.set("seed", seed)
    return cfg


def registry_help() -> str:
    width = max(len(k.name) for k in REGISTRY)
    lines = []
    for k in REGISTRY:
        auto = k.default == AUTO and k.kind in ("int", "float")
        default = "auto" if auto else _format(k.kind, k.default)
        lines.append(f"  {k.name.ljust(width)}  {k.help} (default {default})")
    return "\n".join(lines)
