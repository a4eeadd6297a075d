"""Two-stage divide-and-conquer training and its baselines.

Stage 1 trains one base denoiser on all timesteps. Stage 2 prunes a copy
of it for every timestep group to that group's FLOPs limit and fine-tunes
it on the group's timesteps only. Runs persist to an experiment directory
(optional) and resume at group granularity::

    <out>/config.copy  plan.txt  base/ckpt.bin  report.json  log.txt
    <out>/groups/<i>/{ckpt.bin, scheme.json, bank.jsonl, prompts/}
"""

from __future__ import annotations

import contextlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import FlopsBudget, GroupPlan, format_plan, format_ranges, plan_groups
from .config import ExperimentConfig, dumps_config
from .datasets import sample_dataset
from .denoiser import (
    Batch,
    DenoiserSpec,
    Parameters,
    adam_init,
    adam_step,
    apply_mask,
    count_flops,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
)
from .pruning import (
    MagnitudeProxy,
    MemoryBank,
    PruneOutcome,
    PruningScheme,
    StubChatClient,
    ChatEndpoint,
    GroupDescriptor,
    ProxyRequest,
    iterative_prune,
    make_eval_batches,
    make_proxy,
    mean_loss,
)
from .sampling import ModelBank, evaluate_run, trajectory_flops
from .schedule import NoiseSchedule, build_schedule

log = logging.getLogger(__name__)

__all__ = [
    "TrainingDivergedError",
    "RunReport",
    "make_schedule",
    "make_budget",
    "make_plan",
    "base_spec",
    "load_data",
    "train",
    "train_base",
    "prune_group",
    "finetune_group",
    "specialize_group",
    "tdc_train",
    "single_stage_train",
    "schedule_ablation",
    "stability_study",
    "load_model_bank",
]

# seed streams; every random draw in a run derives from (training.seed, stream, ...)
_DATA, _BASE_INIT, _BASE_BATCHES, _EVAL, _PROXY, _FINETUNE, _SS_INIT, _SS_PROBE, _SS_BATCHES, _TAYLOR, \
    _HELDOUT = range(11)
_ALL_TIMESTEPS = 10 ** 6  # group key for searches over every timestep


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, seed, value: float):
        super().__init__(f"non-finite loss {value} at step {step} (batch seed {seed})")
        self.step = step
        self.seed = seed


@dataclass
class RunReport:
    """Step ledger, per-group FLOPs and losses, sampling cost and metrics of one run.

    ``wall_clock`` is kept out of :meth:`to_json` so identical configs give
    byte-identical report files.
    """

    mode: str
    steps: dict
    groups: list
    flops: dict
    metrics: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "steps": self.steps, "groups": self.groups, "flops": self.flops,
                "metrics": self.metrics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(d["mode"], d["steps"], d["groups"], d["flops"], d.get("metrics", {}))

    def table(self) -> str:
        lines = [f"mode: {self.mode}",
                 f"train steps: stage1={self.steps['stage1']} stage2={self.steps['stage2_total']} "
                 f"total={self.steps['total']}",
                 "group  status   timesteps        flops_limit  flops     params  loss      base_loss"]
        for g in self.groups:
            if g["status"] != "active":
                lines.append(f"{g['index']:<6d} {g['status']:<8s} {g['timesteps']:<16s}")
                continue
            base_loss = "-" if g["base_loss"] is None else f"{g['base_loss']:.5f}"
            lines.append(f"{g['index']:<6d} {g['status']:<8s} {g['timesteps']:<16s} {g['flops_limit']:<12.6g} "
                         f"{g['flops']:<9d} {g['params']:<7d} {g['loss']:<9.5f} {base_loss}")
        f = self.flops
        lines.append(f"base flops: {f['base']}  trajectory-mean flops: {f['trajectory_mean']:.6g} "
                     f"(ratio {f['ratio']:.4f})")
        for name, m in sorted(self.metrics.items()):
            lines.append(f"{name}: energy_distance={m['energy_distance']:.6f} "
                         f"sliced_wasserstein={m['sliced_wasserstein']:.6f}")
        return "\n".join(lines) + "\n"


def make_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    sc = cfg.schedule
    return build_schedule(sc.kind, sc.T, beta_start=sc.beta_start, beta_end=sc.beta_end, offset=sc.offset)


def base_spec(cfg: ExperimentConfig, input_dim: int = 2) -> DenoiserSpec:
    return DenoiserSpec(input_dim, tuple(cfg.model.hidden_widths), cfg.model.time_embed_dim)


def make_budget(cfg: ExperimentConfig, input_dim: int = 2) -> FlopsBudget:
    return FlopsBudget(cfg.allocation.k, float(count_flops(base_spec(cfg, input_dim))))


def make_plan(cfg: ExperimentConfig, schedule: NoiseSchedule | None = None, input_dim: int = 2,
              shape: str | None = None) -> GroupPlan:
    schedule = schedule or make_schedule(cfg)
    return plan_groups(schedule, cfg.allocation.groups, make_budget(cfg, input_dim), shape or cfg.allocation.shape)


def load_data(cfg: ExperimentConfig, data=None) -> np.ndarray:
    if data is not None:
        return np.asarray(data, dtype=np.float64)
    return sample_dataset(cfg.dataset.name, cfg.dataset.size, [cfg.training.seed, _DATA])


def _heldout(cfg: ExperimentConfig, data: np.ndarray, from_generator: bool) -> np.ndarray:
    if from_generator:
        return sample_dataset(cfg.dataset.name, 4096, [cfg.training.seed, _HELDOUT])
    return data


def _seed_int(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def train(params: Parameters, data: np.ndarray, timesteps, steps: int, lr: float, cfg: ExperimentConfig,
          schedule: NoiseSchedule, seed, checkpoint=None) -> tuple[Parameters, list]:
    """Adam on epsilon-prediction MSE with timesteps drawn uniformly from ``timesteps``.

    ``checkpoint(params, step)`` is called every ``training.checkpoint_every`` steps.
    """
    tc = cfg.training
    ts = np.asarray(sorted(timesteps), dtype=np.int64)
    rng = np.random.default_rng(seed)
    state = adam_init(params)
    losses = []
    for step in range(1, steps + 1):
        idx = rng.integers(0, data.shape[0], tc.batch_size)
        batch = Batch(data[idx], ts[rng.integers(0, ts.size, tc.batch_size)],
                      rng.standard_normal((tc.batch_size, data.shape[1])))
        value, g = loss_and_grad(params, batch, schedule)
        if not np.isfinite(value):
            raise TrainingDivergedError(step, seed, value)
        params, state = adam_step(params, g, state, lr, tc.beta1, tc.beta2, tc.epsilon)
        losses.append(value)
        if checkpoint is not None and step % tc.checkpoint_every == 0:
            checkpoint(params, step)
    return params, losses


class _RunDir:
    """Experiment-directory paths; every method is a no-op without a directory."""

    def __init__(self, out):
        self.root = Path(out) if out is not None else None

    def __bool__(self):
        return self.root is not None

    def path(self, *parts) -> Path | None:
        return self.root.joinpath(*parts) if self.root is not None else None

    def write(self, text: str, *parts):
        if self.root is not None:
            p = self.path(*parts)
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)

    def completed_checkpoint(self, *parts):
        p = self.path(*parts)
        if p is None or not p.exists():
            return None
        params, _, extra = load_checkpoint(p, with_extra=True)
        return (params, extra) if extra.get("complete") else None


@contextlib.contextmanager
def _logging_to(run: _RunDir):
    if not run:
        yield
        return
    run.root.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run.path("log.txt"))
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("progdiff")
    root.addHandler(handler)
    old_level = root.level
    if root.level == logging.NOTSET or root.level > logging.INFO:
        root.setLevel(logging.INFO)
    try:
        yield
    finally:
        root.removeHandler(handler)
        root.setLevel(old_level)
        handler.close()


def _prepare_run(cfg: ExperimentConfig, run: _RunDir, plan: GroupPlan):
    if run:
        run.write(dumps_config(cfg), "config.copy")
        run.write(format_plan(plan), "plan.txt")


def train_base(cfg: ExperimentConfig, out=None, data=None, schedule=None) -> tuple[Parameters, dict]:
    """Stage 1: one model over every timestep. Reuses a completed checkpoint in ``out``."""
    run = _RunDir(out)
    done = run.completed_checkpoint("base", "ckpt.bin")
    if done is not None:
        log.info("stage 1 already complete; reusing base checkpoint")
        return done[0], done[1]["info"]
    schedule = schedule or make_schedule(cfg)
    data = load_data(cfg, data)
    params = init_params(base_spec(cfg, data.shape[1]), _seed_int(cfg.training.seed, _BASE_INIT))
    steps = cfg.training.stage1_steps
    path = run.path("base", "ckpt.bin")

    def checkpoint(p, step):
        save_checkpoint(p, None, path, {"complete": False, "step": step})

    log.info("stage 1: %d steps over all %d timesteps", steps, schedule.T)
    params, losses = train(params, data, range(schedule.T), steps, cfg.training.lr, cfg, schedule,
                           [cfg.training.seed, _BASE_BATCHES], checkpoint if run else None)
    info = {"steps": steps, "initial_loss": losses[0] if losses else None,
            "final_loss": losses[-1] if losses else None}
    if losses:
        log.info("stage 1 done: loss %.5f -> %.5f", losses[0], losses[-1])
    if run:
        save_checkpoint(params, None, path, {"complete": True, "info": info})
    return params, info


def _make_group_proxy(cfg, i, schedule, data, group, run: _RunDir):
    seed = _seed_int(cfg.training.seed, _PROXY, i)
    kind = cfg.pruning.proxy
    if kind == "taylor":
        batch = make_eval_batches(data, group, 1, cfg.pruning.eval_batch_size, [cfg.training.seed, _TAYLOR, i])[0]
        return make_proxy(kind, seed=seed, batch=batch, schedule=schedule)
    if kind == "llm":
        lc = cfg.llm
        client = StubChatClient() if lc.stub else ChatEndpoint.from_env(
            temperature=lc.temperature, timeout=lc.timeout, retries=lc.retries)
        return make_proxy(kind, client=client, archive_dir=run.path("groups", str(i), "prompts"))
    return make_proxy(kind, seed=seed)


def _settings_digest(cfg: ExperimentConfig) -> str:
    tc = cfg.training
    return (f"schedule={cfg.schedule.kind}/T={cfg.schedule.T}; groups={cfg.allocation.groups}; "
            f"k={cfg.allocation.k}; stage2_steps={tc.stage2_steps}; finetune_lr={tc.finetune_lr}; "
            f"batch={tc.batch_size}; metric=pre-finetune eps-mse")


def prune_group(cfg: ExperimentConfig, base: Parameters, plan: GroupPlan, i: int, schedule: NoiseSchedule,
                data: np.ndarray | None = None, out=None, eval_batches=None) -> PruneOutcome:
    """Proxy search for group ``i`` under ``min(w(i), F_max)``; persists scheme and bank."""
    run = _RunDir(out)
    group = plan.members[i]
    f = min(float(plan.w[i]), float(plan.profile.budget.F_max))
    saved = run.path("groups", str(i), "scheme.json")
    if saved is not None and saved.exists():
        d = json.loads(saved.read_text())
        scheme = PruningScheme.from_remove_map(d["remove"], len(base.spec.hidden_widths), d["proxy"], d["round"])
        return PruneOutcome(scheme, d["loss"], d["flops"], d["best_per_round"], d["round_losses"], d["failures"])
    from_generator = data is None
    data = load_data(cfg, data)
    if eval_batches is None:
        eval_batches = make_eval_batches(_heldout(cfg, data, from_generator), group, cfg.pruning.eval_batches, cfg.pruning.eval_batch_size,
                                         [cfg.training.seed, _EVAL, i])
    bank_path = run.path("groups", str(i), "bank.jsonl")
    if bank_path is not None and bank_path.exists():
        bank_path.unlink()  # an interrupted search restarts from scratch
    bank = MemoryBank(path=bank_path)
    proxy = _make_group_proxy(cfg, i, schedule, data, group, run)
    outcome = iterative_prune(base, group, f, proxy, schedule=schedule, eval_batches=eval_batches,
                              rounds=cfg.pruning.rounds, candidates=cfg.pruning.candidates, bank=bank,
                              settings=_settings_digest(cfg), dataset=cfg.dataset.name,
                              fallback=MagnitudeProxy(_seed_int(cfg.training.seed, _PROXY, i)))
    log.info("group %d: best scheme removes %d channels, flops %d <= %.6g, loss %.5f", i,
             outcome.scheme.n_removed, outcome.flops, f, outcome.loss)
    if run:
        run.write(json.dumps({"remove": outcome.scheme.remove_map(), "proxy": outcome.scheme.proxy,
                              "round": outcome.scheme.round, "loss": outcome.loss, "flops": outcome.flops,
                              "flops_limit": f, "best_per_round": outcome.best_per_round,
                              "round_losses": outcome.round_losses, "failures": outcome.failures},
                             indent=2, sort_keys=True) + "\n", "groups", str(i), "scheme.json")
    return outcome


def finetune_group(cfg: ExperimentConfig, params: Parameters, group, i: int, schedule: NoiseSchedule,
                   data: np.ndarray) -> tuple[Parameters, list]:
    """Fine-tune on the group's timesteps only, at the fine-tuning learning rate."""
    return train(params, data, group, cfg.training.stage2_steps, cfg.training.finetune_lr, cfg, schedule,
                 [cfg.training.seed, _FINETUNE, i])


def _skipped(i: int) -> dict:
    return {"index": i, "status": "skipped", "timesteps": "-", "size": 0,
            "note": "empty group; sampler falls back to the base model"}


def specialize_group(base: Parameters, plan: GroupPlan, i: int, cfg: ExperimentConfig, *, schedule=None,
                     data=None, heldout=None, prune: bool = True, out=None) -> tuple[Parameters | None, dict]:
    """Prune (optionally) and fine-tune a copy of ``base`` for group ``i``.

    Returns the group model and its report entry; empty groups return
    ``(None, entry)`` marked skipped.
    """
    run = _RunDir(out)
    group = plan.members[i]
    if not group:
        log.info("group %d is empty; skipped", i)
        return None, _skipped(i)
    done = run.completed_checkpoint("groups", str(i), "ckpt.bin")
    if done is not None:
        log.info("group %d already complete; reusing checkpoint", i)
        return done[0], done[1]["entry"]
    schedule = schedule or make_schedule(cfg)
    from_generator = data is None
    data = load_data(cfg, data)
    heldout = _heldout(cfg, data, from_generator) if heldout is None else heldout
    eval_batches = make_eval_batches(heldout, group, cfg.pruning.eval_batches, cfg.pruning.eval_batch_size,
                                     [cfg.training.seed, _EVAL, i])
    f = min(float(plan.w[i]), float(plan.profile.budget.F_max))
    if prune:
        outcome = prune_group(cfg, base, plan, i, schedule, data, out, eval_batches)
        model = apply_mask(base, outcome.scheme.mask(base.spec))
        removed = outcome.scheme.remove_map()
    else:
        model, removed = base.copy(), {}
    model, losses = finetune_group(cfg, model, group, i, schedule, data)
    entry = {
        "index": i,
        "status": "active",
        "timesteps": format_ranges(list(group)),
        "size": len(group),
        "flops_limit": f,
        "flops": count_flops(model.spec),
        "params": model.n_params,
        "hidden_widths": list(model.spec.hidden_widths),
        "removed": {k: len(v) for k, v in removed.items()},
        "stage2_steps": cfg.training.stage2_steps,
        "loss": mean_loss(model, eval_batches, schedule),
        "base_loss": mean_loss(base, eval_batches, schedule),
    }
    if prune and entry["flops"] > f:
        raise RuntimeError(f"group {i}: achieved FLOPs {entry['flops']} exceed limit {f}")
    if run:
        save_checkpoint(model, None, run.path("groups", str(i), "ckpt.bin"), {"complete": True, "entry": entry})
    return model, entry


def _finish(cfg, mode, run, plan, base, models, entries, stage1, schedule, data, from_generator,
            timings, base_flops=None) -> tuple[RunReport, ModelBank]:
    bank = ModelBank.from_plan(plan, models, fallback=base)
    mean_flops, total_flops = trajectory_flops(bank, cfg.sampling.steps)
    F = base_flops if base_flops is not None else count_flops(base.spec)
    stage2 = {str(e["index"]): e.get("stage2_steps", 0) for e in entries if e["status"] == "active"}
    steps = {"stage1": stage1, "stage2": stage2, "stage2_total": sum(stage2.values())}
    steps["total"] = steps["stage1"] + steps["stage2_total"]
    t0 = time.perf_counter()
    reference = None if from_generator else data
    metrics = {"grouped": evaluate_run(bank, cfg, schedule, reference).to_dict()}
    if stage1:
        metrics["base"] = evaluate_run(base, cfg, schedule, reference).to_dict()
    timings["evaluation"] = time.perf_counter() - t0
    report = RunReport(
        mode=mode,
        steps=steps,
        groups=entries,
        flops={"base": F, "trajectory_mean": mean_flops, "trajectory_total": total_flops,
               "ratio": mean_flops / F, "sampling_steps": cfg.sampling.steps},
        metrics=metrics,
        wall_clock=timings,
    )
    if run:
        run.write(report.to_json(), "report.json")
        run.write(json.dumps(timings, indent=2, sort_keys=True) + "\n", "timing.json")
    return report, bank


def tdc_train(cfg: ExperimentConfig, out=None, data=None, prune: bool | None = None,
              shape: str | None = None) -> tuple[RunReport, ModelBank]:
    """Group timesteps, train the base model, then specialize every group.

    ``prune=False`` is the no-pruning variant: each group fine-tunes the
    unpruned base. ``shape`` overrides the per-timestep FLOPs schedule.
    """
    prune = cfg.pruning.enabled if prune is None else prune
    run = _RunDir(out)
    from_generator = data is None
    data = load_data(cfg, data)
    schedule = make_schedule(cfg)
    plan = make_plan(cfg, schedule, data.shape[1], shape)
    heldout = _heldout(cfg, data, from_generator)
    timings = {}
    with _logging_to(run):
        _prepare_run(cfg, run, plan)
        log.info("plan: %d groups, sizes %s", plan.N, [len(m) for m in plan.members])
        t0 = time.perf_counter()
        base, _ = train_base(cfg, out, data, schedule)
        timings["stage1"] = time.perf_counter() - t0
        models, entries = {}, []
        for i in range(plan.N):
            t0 = time.perf_counter()
            model, entry = specialize_group(base, plan, i, cfg, schedule=schedule, data=data, heldout=heldout,
                                            prune=prune, out=out)
            timings[f"group{i}"] = time.perf_counter() - t0
            if model is not None:
                models[i] = model
            entries.append(entry)
        mode = "tdc" if prune else "tdc-no-prune"
        return _finish(cfg, mode, run, plan, base, models, entries, cfg.training.stage1_steps, schedule,
                       data, from_generator, timings)


def single_stage_budget(cfg: ExperimentConfig, plan: GroupPlan) -> dict:
    """Per-group step counts for the from-scratch baseline.

    With ``matched_budget`` the two-stage total is split evenly over the
    active groups, remainder to the lowest indices.
    """
    active = plan.active_groups
    if not cfg.training.matched_budget:
        return {i: cfg.training.single_stage_steps for i in active}
    total = cfg.training.stage1_steps + cfg.training.stage2_steps * len(active)
    share, extra = divmod(total, len(active))
    return {i: share + (1 if n < extra else 0) for n, i in enumerate(active)}


def single_stage_train(cfg: ExperimentConfig, out=None, data=None,
                       prune: bool | None = None) -> tuple[RunReport, ModelBank]:
    """Baseline: every group model trained from scratch on its own timesteps."""
    prune = cfg.pruning.enabled if prune is None else prune
    run = _RunDir(out)
    from_generator = data is None
    data = load_data(cfg, data)
    schedule = make_schedule(cfg)
    plan = make_plan(cfg, schedule, data.shape[1])
    heldout = _heldout(cfg, data, from_generator)
    budget = single_stage_budget(cfg, plan)
    spec = base_spec(cfg, data.shape[1])
    models, entries, timings = {}, [], {}
    with _logging_to(run):
        _prepare_run(cfg, run, plan)
        for i in range(plan.N):
            group = plan.members[i]
            if not group:
                entries.append(_skipped(i))
                continue
            done = run.completed_checkpoint("groups", str(i), "ckpt.bin")
            if done is not None:
                models[i], entry = done[0], done[1]["entry"]
                entries.append(entry)
                continue
            t0 = time.perf_counter()
            f = min(float(plan.w[i]), float(plan.profile.budget.F_max))
            group_spec = spec
            if prune:
                probe = init_params(spec, _seed_int(cfg.training.seed, _SS_PROBE, i))
                scheme = MagnitudeProxy().propose(_probe_request(probe, f), probe)[0]
                group_spec = scheme.mask(spec).masked_spec(spec)
            params = init_params(group_spec, _seed_int(cfg.training.seed, _SS_INIT, i))
            params, _ = train(params, data, group, budget[i], cfg.training.lr, cfg, schedule,
                              [cfg.training.seed, _SS_BATCHES, i])
            eval_batches = make_eval_batches(heldout, group, cfg.pruning.eval_batches,
                                             cfg.pruning.eval_batch_size, [cfg.training.seed, _EVAL, i])
            entry = {"index": i, "status": "active", "timesteps": format_ranges(list(group)),
                     "size": len(group), "flops_limit": f, "flops": count_flops(params.spec),
                     "params": params.n_params, "hidden_widths": list(params.spec.hidden_widths),
                     "stage2_steps": budget[i], "loss": mean_loss(params, eval_batches, schedule),
                     "base_loss": None}
            if run:
                save_checkpoint(params, None, run.path("groups", str(i), "ckpt.bin"),
                                {"complete": True, "entry": entry})
            models[i] = params
            entries.append(entry)
            timings[f"group{i}"] = time.perf_counter() - t0
        fallback = models[plan.active_groups[0]]
        return _finish(cfg, "single-stage", run, plan, fallback, models, entries, 0, schedule, data,
                       from_generator, timings, base_flops=count_flops(spec))


def _probe_request(params: Parameters, f: float):
    return ProxyRequest(params.spec, f, GroupDescriptor((), 0.0, 0.0))


def schedule_ablation(cfg: ExperimentConfig, shape: str, out=None, data=None) -> RunReport:
    """Full two-stage run with an alternative per-timestep FLOPs schedule."""
    report, _ = tdc_train(cfg.replace(allocation={"shape": shape}), out, data)
    report.mode = f"tdc[{shape}]"
    if out is not None:
        _RunDir(out).write(report.to_json(), "report.json")
    return report


def stability_study(cfg: ExperimentConfig, base: Parameters, flops_ratio: float | None = None, data=None,
                    proxy: str | None = None, bank_path=None) -> PruneOutcome:
    """Repeated proxy search over all timesteps at ``flops_ratio * F_max`` kept FLOPs."""
    ratio = cfg.pruning.flops_ratio if flops_ratio is None else flops_ratio
    schedule = make_schedule(cfg)
    from_generator = data is None
    data = load_data(cfg, data)
    group = tuple(range(schedule.T))
    f = ratio * count_flops(base.spec)
    cfg = cfg if proxy is None else cfg.replace(pruning={"proxy": proxy})
    eval_batches = make_eval_batches(_heldout(cfg, data, from_generator), group, cfg.pruning.eval_batches,
                                     cfg.pruning.eval_batch_size, [cfg.training.seed, _EVAL, _ALL_TIMESTEPS])
    p = _make_group_proxy(cfg, _ALL_TIMESTEPS, schedule, data, group, _RunDir(None))
    return iterative_prune(base, group, f, p, schedule=schedule, eval_batches=eval_batches,
                           rounds=cfg.pruning.rounds, candidates=cfg.pruning.candidates,
                           bank=MemoryBank(path=bank_path), settings=_settings_digest(cfg),
                           dataset=cfg.dataset.name)


def load_model_bank(out, cfg: ExperimentConfig) -> ModelBank:
    """Rebuild the grouped sampler from a finished experiment directory."""
    run = _RunDir(out)
    schedule = make_schedule(cfg)
    plan = make_plan(cfg, schedule)
    base_ckpt = run.path("base", "ckpt.bin")
    base = load_checkpoint(base_ckpt)[0] if base_ckpt.exists() else None
    models = {}
    for i in plan.active_groups:
        p = run.path("groups", str(i), "ckpt.bin")
        if p.exists():
            models[i] = load_checkpoint(p)[0]
    if base is None and models:
        base = models[min(models)]
    return ModelBank.from_plan(plan, models, fallback=base)
