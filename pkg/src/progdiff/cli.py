"""Command-line interface.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on
runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import filelock

from .allocation import SCHEDULE_SHAPES, format_plan
from .config import ConfigError, ExperimentConfig, dumps_config, load_config
from .denoiser import load_checkpoint
from .pipeline import (
    RunReport,
    _RunDir,
    load_model_bank,
    make_plan,
    make_schedule,
    prune_group,
    schedule_ablation,
    single_stage_train,
    specialize_group,
    stability_study,
    tdc_train,
    train_base,
)
from .pruning import PROXY_KINDS
from .sampling import ddim_sample, evaluate_run, write_samples_csv

log = logging.getLogger("progdiff")

COMMANDS = ("plan", "train-base", "prune", "finetune", "pipeline", "single-stage", "ablate-schedule",
            "sample", "eval", "report")
# commands that may take their config from <out>/config.copy
_CONFIG_FROM_RUN = ("sample", "eval", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (TOML)")
    common.add_argument("--out", type=Path, default=Path("run"), help="experiment directory (default: ./run)")
    common.add_argument("--seed", type=int, help="override training.seed")
    common.add_argument("--proxy", choices=PROXY_KINDS, help="override pruning.proxy")
    common.add_argument("--groups", type=int, help="override allocation.groups")
    common.add_argument("--k", type=float, help="override allocation.k")
    common.add_argument("--no-prune", action="store_true", help="fine-tune unpruned copies of the base model")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="progdiff", description="Timestep-grouped diffusion training at toy scale.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("plan", parents=[common], help="write plan.txt (no training)")
    sub.add_parser("train-base", parents=[common], help="stage 1: train the base model")
    p = sub.add_parser("prune", parents=[common], help="proxy search per group (needs a base model)")
    p.add_argument("--group", type=int, help="only this group")
    p.add_argument("--flops-ratio", type=float,
                   help="stability study instead: search over all timesteps at this kept-FLOPs fraction")
    p = sub.add_parser("finetune", parents=[common], help="stage 2: fine-tune every pruned group model")
    p.add_argument("--group", type=int, help="only this group")
    sub.add_parser("pipeline", parents=[common], help="plan, stage 1 and stage 2, then evaluate")
    sub.add_parser("single-stage", parents=[common], help="baseline: group models from scratch")
    p = sub.add_parser("ablate-schedule", parents=[common], help="compare per-timestep FLOPs schedules")
    p.add_argument("--shape", choices=(*SCHEDULE_SHAPES, "all"), default="all")
    p = sub.add_parser("sample", parents=[common], help="write samples.csv from a finished run")
    p.add_argument("--n", type=int, default=1000)
    sub.add_parser("eval", parents=[common], help="evaluate the grouped sampler of a finished run")
    sub.add_parser("report", parents=[common], help="print the run report")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.no_prune and args.proxy is not None:
        raise UsageError("--no-prune makes --proxy meaningless; pass only one of them")
    path = args.config
    if path is None and args.command in _CONFIG_FROM_RUN and (args.out / "config.copy").exists():
        path = args.out / "config.copy"
    if path is None:
        raise UsageError(f"{args.command}: --config is required")
    if not Path(path).exists():
        raise UsageError(f"config file {path} does not exist")
    cfg = load_config(path)
    overrides = {}
    if args.seed is not None:
        overrides.setdefault("training", {})["seed"] = args.seed
    if args.proxy is not None:
        overrides.setdefault("pruning", {})["proxy"] = args.proxy
    if args.no_prune:
        overrides.setdefault("pruning", {})["enabled"] = False
    if args.groups is not None:
        overrides.setdefault("allocation", {})["groups"] = args.groups
    if args.k is not None:
        overrides.setdefault("allocation", {})["k"] = args.k
    return cfg.replace(**overrides) if overrides else cfg


def _claim_dir(cfg: ExperimentConfig, out: Path) -> None:
    """Record the resolved config, refusing to mix experiments in one directory."""
    out.mkdir(parents=True, exist_ok=True)
    copy = out / "config.copy"
    text = dumps_config(cfg)
    if copy.exists() and copy.read_text() != text:
        raise UsageError(f"{out} holds a different experiment (config.copy differs); use another --out")
    copy.write_text(text)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_plan(cfg, args):
    plan = make_plan(cfg)
    _RunDir(args.out).write(format_plan(plan), "plan.txt")
    for i, m in enumerate(plan.members):
        print(f"group {i}: ({plan.v[i]:.6g}, {plan.w[i]:.6g}] FLOPs, {len(m)} timesteps")


def _cmd_train_base(cfg, args):
    _, info = train_base(cfg, args.out)
    _print_json(info)


def _base(args):
    path = args.out / "base" / "ckpt.bin"
    if not path.exists():
        raise RuntimeError(f"no base model at {path}; run train-base first")
    return load_checkpoint(path)[0]


def _groups(plan, args):
    if args.group is None:
        return plan.active_groups
    if not 0 <= args.group < plan.N:
        raise UsageError(f"--group must lie in [0, {plan.N})")
    return [args.group]


def _cmd_prune(cfg, args):
    base = _base(args)
    if args.flops_ratio is not None:
        if not 0 < args.flops_ratio <= 1:
            raise UsageError("--flops-ratio must lie in (0, 1]")
        outcome = stability_study(cfg, base, args.flops_ratio, bank_path=args.out / "stability" / "bank.jsonl")
        rows = [{"round": r, "mean": m, "std": s, "best_so_far": b}
                for r, ((m, s), b) in enumerate(zip(outcome.round_stats(), outcome.best_per_round))]
        _RunDir(args.out).write(json.dumps(rows, indent=2) + "\n", "stability", "rounds.json")
        print("round  mean_loss   std_loss    best_so_far")
        for row in rows:
            print(f"{row['round']:<6d} {row['mean']:<11.6f} {row['std']:<11.6f} {row['best_so_far']:.6f}")
        return
    if not cfg.pruning.enabled:
        raise UsageError("pruning is disabled for this experiment")
    schedule = make_schedule(cfg)
    plan = make_plan(cfg, schedule)
    for i in _groups(plan, args):
        outcome = prune_group(cfg, base, plan, i, schedule, out=args.out)
        print(f"group {i}: removed {outcome.scheme.n_removed} channels, flops {outcome.flops}, "
              f"loss {outcome.loss:.6f}")


def _cmd_finetune(cfg, args):
    base = _base(args)
    schedule = make_schedule(cfg)
    plan = make_plan(cfg, schedule)
    for i in _groups(plan, args):
        if cfg.pruning.enabled and not (args.out / "groups" / str(i) / "scheme.json").exists():
            raise RuntimeError(f"group {i} has no pruning scheme; run prune first")
        _, entry = specialize_group(base, plan, i, cfg, schedule=schedule, prune=cfg.pruning.enabled,
                                    out=args.out)
        print(f"group {i}: flops {entry['flops']}, loss {entry['loss']:.6f} (base {entry['base_loss']:.6f})")


def _cmd_pipeline(cfg, args):
    report, _ = tdc_train(cfg, args.out)
    print(report.table(), end="")


def _cmd_single_stage(cfg, args):
    report, _ = single_stage_train(cfg, args.out)
    print(report.table(), end="")


def _cmd_ablate(cfg, args):
    shapes = SCHEDULE_SHAPES if args.shape == "all" else (args.shape,)
    rows = []
    for shape in shapes:
        r = schedule_ablation(cfg, shape, args.out / "ablation" / shape)
        rows.append({"shape": shape, "energy_distance": r.metrics["grouped"]["energy_distance"],
                     "trajectory_mean_flops": r.flops["trajectory_mean"], "flops_ratio": r.flops["ratio"],
                     "params": [g.get("params") for g in r.groups]})
    _RunDir(args.out).write(json.dumps(rows, indent=2) + "\n", "ablation", "table.json")
    print("shape            energy_distance  mean_flops   ratio")
    for row in rows:
        print(f"{row['shape']:<16s} {row['energy_distance']:<16.6f} {row['trajectory_mean_flops']:<12.6g} "
              f"{row['flops_ratio']:.4f}")


def _cmd_sample(cfg, args):
    bank = load_model_bank(args.out, cfg)
    if bank.fallback is None:
        raise RuntimeError(f"no trained models in {args.out}")
    samples = ddim_sample(bank, make_schedule(cfg), cfg.sampling.steps, args.n, cfg.sampling.seed)
    write_samples_csv(samples, args.out / "samples.csv")
    print(f"wrote {args.n} samples to {args.out / 'samples.csv'}")


def _cmd_eval(cfg, args):
    bank = load_model_bank(args.out, cfg)
    if bank.fallback is None:
        raise RuntimeError(f"no trained models in {args.out}")
    metrics = evaluate_run(bank, cfg).to_dict()
    report_path = args.out / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        report.setdefault("metrics", {})["grouped"] = metrics
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print_json(metrics)


def _cmd_report(cfg, args):
    path = args.out / "report.json"
    if not path.exists():
        raise RuntimeError(f"no report at {path}")
    print(RunReport.from_dict(json.loads(path.read_text())).table(), end="")


_HANDLERS = {
    "plan": _cmd_plan, "train-base": _cmd_train_base, "prune": _cmd_prune, "finetune": _cmd_finetune,
    "pipeline": _cmd_pipeline, "single-stage": _cmd_single_stage, "ablate-schedule": _cmd_ablate,
    "sample": _cmd_sample, "eval": _cmd_eval, "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    saved = (log.propagate, log.level)
    log.addHandler(console)
    log.propagate = False
    log.setLevel(logging.INFO)
    try:
        if args.command != "report":
            args.out.mkdir(parents=True, exist_ok=True)
        lock = filelock.FileLock(str(args.out / ".lock"), timeout=0) if args.out.exists() else None
        if lock is not None:
            lock.acquire()
        try:
            # the stability study is an analysis: it may use another proxy than the experiment
            analysis = args.command == "prune" and args.flops_ratio is not None
            if args.command not in _CONFIG_FROM_RUN and not analysis:
                _claim_dir(cfg, args.out)
            _HANDLERS[args.command](cfg, args)
        finally:
            if lock is not None:
                lock.release()
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except filelock.Timeout:
        print(f"error: {args.out} is in use by another progdiff process", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit status 2
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        log.removeHandler(console)
        log.propagate = saved[0]
        log.setLevel(saved[1])
    return 0


if __name__ == "__main__":
    sys.exit(main())
