"""Importance proxies that propose structured pruning schemes."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..denoiser import Batch, DenoiserSpec, Parameters, PruneMask, count_flops, grad, layer_flops
from ..schedule import NoiseSchedule, snr_db_all
from .scheme import PruningScheme

log = logging.getLogger(__name__)


class ProxyError(RuntimeError):
    """A proxy could not produce proposals."""


class ProxyUnavailableError(ProxyError):
    """Remote proxy unreachable after all retries."""


class UnrepairableSchemeError(ValueError):
    pass


@dataclass(frozen=True)
class GroupDescriptor:
    timesteps: tuple
    snr_min: float
    snr_max: float


@dataclass(frozen=True)
class ProxyRequest:
    """Everything a proxy is told about one pruning decision."""

    spec: DenoiserSpec
    flops_limit: float
    group: GroupDescriptor
    history: tuple = ()
    n_candidates: int = 1
    settings: str = ""
    dataset: str = ""
    round: int = 0

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("at least one candidate must be requested")
        losses = [e.loss for e in self.history]
        if losses != sorted(losses):
            raise ValueError("history must be sorted by loss, best first")

    @property
    def full_flops(self) -> int:
        return count_flops(self.spec)

    def layer_table(self) -> list[tuple[int, str, int, int, int]]:
        dims = self.spec.layer_dims
        return [(l, "hidden" if l < len(dims) - 1 else "output", i, o, layer_flops(i, o, l < len(dims) - 1))
                for l, (i, o) in enumerate(dims)]


def build_request(params: Parameters, group, schedule: NoiseSchedule, flops_limit: float, bank=None,
                  n_candidates: int = 1, settings: str = "", dataset: str = "", round: int = 0) -> ProxyRequest:
    ts = tuple(sorted(int(t) for t in group))
    snr = snr_db_all(schedule)[list(ts)] if ts else np.array([np.nan])
    history = tuple(bank.ranked()) if bank is not None else ()
    return ProxyRequest(params.spec, float(flops_limit), GroupDescriptor(ts, float(snr.min()), float(snr.max())),
                        history, n_candidates, settings, dataset, round)


def magnitude_importance(p: Parameters) -> list[np.ndarray]:
    """Per hidden channel: L2 norm of its incoming row plus outgoing column."""
    scores = []
    for l in range(len(p.spec.hidden_widths)):
        w_in = p.weights[l].astype(np.float64)
        w_out = p.weights[l + 1].astype(np.float64)
        scores.append(np.linalg.norm(w_in, axis=1) + np.linalg.norm(w_out, axis=0))
    return scores


def taylor_importance(p: Parameters, batch: Batch, s: NoiseSchedule) -> list[np.ndarray]:
    """First-order saliency ``sum |w * dL/dw|`` over a channel's in and out weights."""
    g = grad(p, batch, s)
    scores = []
    for l in range(len(p.spec.hidden_widths)):
        sal_in = np.abs(p.weights[l].astype(np.float64) * g.weights[l])
        sal_out = np.abs(p.weights[l + 1].astype(np.float64) * g.weights[l + 1])
        scores.append(sal_in.sum(axis=1) + sal_out.sum(axis=0))
    return scores


def _layer_normalized(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    mean = s.mean()
    return s / mean if mean > 0 else s


def greedy_removal(spec: DenoiserSpec, scores, flops_limit: float, removed=None) -> tuple:
    """Remove lowest-score channels until the FLOPs limit holds.

    Scores are divided by their layer mean first so layers with different
    fan-in/fan-out compete on a common scale. Starts from ``removed``
    (per-layer index collections). Never empties a layer; raises
    :class:`UnrepairableSchemeError` if the limit cannot be met.
    """
    removed = [set(r) for r in (removed or [()] * len(spec.hidden_widths))]
    widths = spec.hidden_widths
    scores = [_layer_normalized(s) for s in scores]

    def flops():
        return count_flops(spec, PruneMask.from_removed(spec, dict(enumerate(removed))))

    current = flops()
    if current <= flops_limit:
        return tuple(tuple(sorted(r)) for r in removed)
    order = sorted((float(scores[l][j]), l, j) for l in range(len(widths)) for j in range(widths[l])
                   if j not in removed[l])
    for _, l, j in order:
        if widths[l] - len(removed[l]) <= 1:
            continue
        removed[l].add(j)
        current = flops()
        if current <= flops_limit:
            return tuple(tuple(sorted(r)) for r in removed)
    raise UnrepairableSchemeError(f"cannot reach {flops_limit} FLOPs; minimum is {current}")


class Proxy(ABC):
    """Proposes raw pruning schemes; :func:`propose_schemes` validates them."""

    name = "proxy"

    @abstractmethod
    def propose(self, req: ProxyRequest, params: Parameters) -> list[PruningScheme]:
        ...


class ScoreProxy(Proxy):
    """Greedy removal by channel score.

    Candidate 0 of round 0 uses the exact ranking; every later candidate
    perturbs the scores by seeded log-normal noise so rounds explore nearby
    schemes.
    """

    def __init__(self, seed: int = 0, jitter: float = 0.25):
        self.seed = seed
        self.jitter = jitter

    @abstractmethod
    def scores(self, params: Parameters) -> list[np.ndarray]:
        ...

    def _perturbed(self, base, index):
        if index == 0 or self.jitter == 0:
            return base
        rng = np.random.default_rng([self.seed, index])
        return [s * np.exp(self.jitter * rng.standard_normal(s.shape)) for s in base]

    def propose(self, req, params):
        base = self.scores(params)
        out = []
        for c in range(req.n_candidates):
            scores = self._perturbed(base, req.round * req.n_candidates + c)
            removed = greedy_removal(req.spec, scores, req.flops_limit)
            out.append(PruningScheme(removed, self.name, req.round))
        return out


class MagnitudeProxy(ScoreProxy):
    name = "magnitude"

    def scores(self, params):
        return magnitude_importance(params)


class TaylorProxy(ScoreProxy):
    name = "taylor"

    def __init__(self, batch: Batch, schedule: NoiseSchedule, seed: int = 0, jitter: float = 0.25):
        super().__init__(seed, jitter)
        self.batch = batch
        self.schedule = schedule

    def scores(self, params):
        return taylor_importance(params, self.batch, self.schedule)


class RandomProxy(ScoreProxy):
    """Uniformly random channel order, seeded per round and candidate."""

    name = "random"

    def scores(self, params):
        return [np.zeros(w) for w in params.spec.hidden_widths]

    def _perturbed(self, base, index):
        rng = np.random.default_rng([self.seed, index])
        return [rng.random(s.shape) for s in base]


def propose_schemes(proxy: Proxy, req: ProxyRequest, params: Parameters) -> list[PruningScheme]:
    """Ask ``proxy`` for candidates, repairing or dropping any that break the limit.

    Over-budget proposals get extra lowest-magnitude channels removed until
    the FLOPs limit holds. Proposals that cannot be repaired are logged and
    dropped.
    """
    raw = proxy.propose(req, params)
    magnitude = None
    out = []
    for scheme in raw:
        try:
            scheme.validate(req.spec)
        except ValueError as exc:
            log.warning("dropping invalid %s proposal: %s", proxy.name, exc)
            continue
        if scheme.flops(req.spec) > req.flops_limit:
            if magnitude is None:
                magnitude = magnitude_importance(params)
            try:
                removed = greedy_removal(req.spec, magnitude, req.flops_limit, scheme.removed)
            except UnrepairableSchemeError as exc:
                log.warning("dropping unrepairable %s proposal: %s", proxy.name, exc)
                continue
            log.info("repaired %s proposal: %d extra channels removed", proxy.name,
                     sum(map(len, removed)) - scheme.n_removed)
            scheme = PruningScheme(removed, scheme.proxy, scheme.round)
        out.append(scheme)
    return out


__all__ = [
    "ProxyError",
    "ProxyUnavailableError",
    "UnrepairableSchemeError",
    "GroupDescriptor",
    "ProxyRequest",
    "build_request",
    "magnitude_importance",
    "taylor_importance",
    "greedy_removal",
    "Proxy",
    "ScoreProxy",
    "MagnitudeProxy",
    "TaylorProxy",
    "RandomProxy",
    "propose_schemes",
]
