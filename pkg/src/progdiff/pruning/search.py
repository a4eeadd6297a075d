"""Scheme evaluation and the multi-round proxy search with a memory bank."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..denoiser import Batch, Parameters, apply_mask, loss
from ..schedule import NoiseSchedule
from .proxies import MagnitudeProxy, Proxy, ProxyError, build_request, propose_schemes
from .scheme import MemoryBank, MemoryBankEntry, PruningScheme

log = logging.getLogger(__name__)


def make_eval_batches(data: np.ndarray, group, n_batches: int, batch_size: int, seed) -> list[Batch]:
    """Fixed held-out batches whose timesteps are drawn only from ``group``."""
    rng = np.random.default_rng(seed)
    ts = np.asarray(sorted(group), dtype=np.int64)
    if ts.size == 0:
        raise ValueError("cannot build evaluation batches for an empty group")
    out = []
    for _ in range(n_batches):
        idx = rng.integers(0, data.shape[0], batch_size)
        t = ts[rng.integers(0, ts.size, batch_size)]
        eps = rng.standard_normal((batch_size, data.shape[1]))
        out.append(Batch(data[idx], t, eps))
    return out


def mean_loss(p: Parameters, batches, s: NoiseSchedule) -> float:
    return float(np.mean([loss(p, b, s) for b in batches]))


def evaluate_scheme(base: Parameters, scheme: PruningScheme, group, eval_batches, s: NoiseSchedule) -> float:
    """Loss of the pruned (not fine-tuned) model on the group's held-out batches."""
    allowed = set(int(t) for t in group)
    for b in eval_batches:
        if not set(np.unique(b.t).tolist()) <= allowed:
            raise ValueError("evaluation batch contains timesteps outside the group")
    pruned = apply_mask(base, scheme.mask(base.spec))
    return mean_loss(pruned, eval_batches, s)


@dataclass
class PruneOutcome:
    scheme: PruningScheme
    loss: float
    flops: int
    best_per_round: list = field(default_factory=list)
    round_losses: list = field(default_factory=list)
    failures: int = 0

    def round_stats(self) -> list[tuple[float, float]]:
        """Mean and population std of candidate losses per round."""
        return [(float(np.mean(l)), float(np.std(l))) if l else (float("nan"), float("nan"))
                for l in self.round_losses]


def iterative_prune(base: Parameters, group, flops_limit: float, proxy: Proxy, *, schedule: NoiseSchedule,
                    eval_batches, rounds: int = 5, candidates: int = 3, bank: MemoryBank | None = None,
                    settings: str = "", dataset: str = "", fallback: Proxy | None = None) -> PruneOutcome:
    """Run ``rounds`` rounds of ``candidates`` proposals, feeding the bank back each round.

    A proxy failure in a round falls back to ``fallback`` (magnitude by
    default) for that round. Returns the best scheme seen (lowest loss, then
    fewer FLOPs, then lexicographically smallest removal lists).
    """
    if rounds < 1 or candidates < 1:
        raise ValueError("rounds and candidates must be >= 1")
    bank = bank if bank is not None else MemoryBank()
    fallback = fallback or MagnitudeProxy()
    best: MemoryBankEntry | None = None
    outcome = PruneOutcome(None, float("inf"), 0)
    spec = base.spec
    for r in range(rounds):
        req = build_request(base, group, schedule, flops_limit, bank, candidates, settings, dataset, r)
        try:
            schemes = propose_schemes(proxy, req, base)
        except ProxyError as exc:
            log.warning("round %d: %s proxy failed (%s); falling back to %s", r, proxy.name, exc, fallback.name)
            schemes = propose_schemes(fallback, req, base)
        failed = candidates - len(schemes)
        if failed:
            log.warning("round %d: %d of %d candidates unusable", r, failed, candidates)
            outcome.failures += failed
        losses = []
        for scheme in schemes:
            value = evaluate_scheme(base, scheme, group, eval_batches, schedule)
            entry = MemoryBankEntry(scheme, value, scheme.flops(spec))
            bank.update(entry)
            losses.append(value)
            if best is None or entry.rank_key() < best.rank_key():
                best = entry
        outcome.round_losses.append(losses)
        outcome.best_per_round.append(best.loss if best is not None else float("inf"))
    if best is None:
        raise ProxyError("no valid pruning candidate was produced in any round")
    outcome.scheme, outcome.loss, outcome.flops = best.scheme, best.loss, best.flops
    return outcome
