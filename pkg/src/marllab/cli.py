"""Command-line entry points.

Exit codes: 0 success; 2 config, usage, or interface-contract problems;
3 missing or malformed artifacts and capacity guards; 4 numerical
failures (non-finite losses, gradients, or parameters).
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from . import harness, plots
from .config import RunConfig, build_config, registry_help
from .errors import (ArtifactError, CapacityError, ConfigError,
                     ContractViolation, NumericalError, UsageError)


def _add_common(p: argparse.ArgumentParser, need_out: bool = True) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="set one config key (repeatable)")
    if need_out:
        p.add_argument("--out", required=True, help="output directory")


def _config_from(args) -> "RunConfig":
    return build_config(args.config, args.override, seed=args.seed)


def _copy_original(args, out_dir) -> None:
    if args.config:
        dest = Path(out_dir) / "config.orig.txt"
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(args.config, dest)


def _cmd_gen_dataset(args) -> int:
    cfg = _config_from(args)
    info = harness.run_gen_dataset(cfg, args.out)
    _copy_original(args, args.out)
    print(f"behavior policy reached {info['behavior_eval_return']:.3f} "
          f"(threshold {info['threshold']:.3f}) after "
          f"{info['behavior_env_steps']} env steps")
    for mode, path in info["paths"].items():
        print(f"{mode}: {path}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _config_from(args)
    info = harness.run_pretrain(cfg, args.out)
    _copy_original(args, args.out)
    res = info["final_eval"]
    print(f"pretrained for {info['updates']} updates; eval return "
          f"{res.mean_return:.3f}, success rate {res.success_rate:.3f}")
    print(f"artifacts: {info['out_dir']}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _config_from(args)
    if args.artifacts:
        cfg.set("run.artifacts", args.artifacts)
    if args.resume:
        cfg.set("run.resume", "true")
    if args.scratch:
        cfg.set("online.from_scratch", "true")
    info = harness.run_online(cfg, args.out)
    _copy_original(args, args.out)
    res = info["final_eval"]
    print(f"ran {info['env_steps']} env steps ({info['episodes']} episodes, "
          f"{info['updates']} updates); eval return {res.mean_return:.3f}, "
          f"success rate {res.success_rate:.3f}")
    print(f"artifacts: {info['out_dir']}")
    return 0


def _cmd_diagnose(args) -> int:
    cfg = _config_from(args)
    if args.artifacts:
        cfg.set("run.artifacts", args.artifacts)
    info = harness.run_diagnose(cfg, args.out)
    _copy_original(args, args.out)
    print(f"probe baseline value {info['probe_baseline']:.4f}")
    for token, rows in info["curves"].items():
        if rows:
            floor = min(r["q"] for r in rows)
            print(f"arm {token}: {len(rows)} probe points, min value {floor:.4f}")
        else:
            print(f"arm {token}: no probe points (run too short)")
    print(f"curves: {info['qcurve_path']}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from(args)
    model, meta = harness.load_model(args.ckpt)
    if meta.get("env") is None:
        raise ArtifactError(f"{args.ckpt}: missing env manifest")
    env = harness.env_from_manifest(meta["env"])
    res = harness.evaluate(model, env, args.episodes, cfg["seed"], 0)
    print(f"mean return {res.mean_return:.4f}, "
          f"success rate {res.success_rate:.4f} over {args.episodes} episodes")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"ckpt": str(args.ckpt), "episodes": args.episodes,
                   "seed": cfg["seed"], "mean_return": res.mean_return,
                   "success_rate": res.success_rate}
        (out / "eval.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
    return 0


def _parse_runs(pairs) -> dict:
    groups = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--runs must look like label=dir[,dir...], "
                             f"got {pair!r}")
        label, rest = pair.split("=", 1)
        paths = []
        for raw in rest.split(","):
            p = Path(raw.strip())
            if p.is_dir():
                p = p / "metrics.csv"
            if not p.exists():
                raise ArtifactError(f"no metrics at {p}")
            paths.append(p)
        groups[label.strip()] = paths
    return groups


def _cmd_plot(args) -> int:
    groups = _parse_runs(args.runs)
    path = plots.plot_metric(groups, args.column, args.out, title=args.title)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marllab",
        description="Offline-to-online cooperative value learning lab.",
        epilog="config keys:\n" + registry_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset",
                       help="train a behavior policy and export datasets")
    _add_common(p)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("pretrain", help="offline conservative value training")
    _add_common(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune",
                       help="online training, from artifacts or from scratch")
    _add_common(p)
    p.add_argument("--artifacts", default=None,
                   help="pretrained artifact directory (sets run.artifacts)")
    p.add_argument("--resume", action="store_true",
                   help="continue from runstate.ckpt in --out")
    p.add_argument("--scratch", action="store_true",
                   help="fresh networks (sets online.from_scratch)")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("diagnose",
                       help="value-retention comparison across arms")
    _add_common(p)
    p.add_argument("--artifacts", default=None,
                   help="pretrained artifact directory (sets run.artifacts)")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("eval", help="evaluate a policy checkpoint")
    _add_common(p, need_out=False)
    p.add_argument("--ckpt", required=True, help="policy checkpoint path")
    p.add_argument("--episodes", type=int, default=64)
    p.add_argument("--out", default=None, help="directory for eval.json")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("plot", help="median and IQR curves across runs")
    p.add_argument("--runs", action="append", required=True,
                   metavar="LABEL=DIR[,DIR...]",
                   help="run group (repeatable); dirs hold metrics.csv")
    p.add_argument("--column", default="episode_return_mean")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True, help="output .svg path")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArtifactError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
