"""Grouped deterministic DDIM sampling, trajectory FLOPs and sample metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from .allocation import GroupPlan
from .datasets import sample_dataset
from .denoiser import Parameters, count_flops, forward
from .schedule import NoiseSchedule

__all__ = [
    "ModelBank",
    "MetricReport",
    "strided_timesteps",
    "ddim_sample",
    "trajectory_flops",
    "energy_distance",
    "sliced_wasserstein",
    "evaluate_samples",
    "evaluate_run",
    "write_samples_csv",
]


class ModelBank:
    """Routes every original timestep to the model of its group.

    ``models`` maps group index to :class:`Parameters` (or any callable
    ``f(x_t, t) -> eps``). Groups without a model use ``fallback``.
    """

    def __init__(self, T: int, group_of, models: dict, fallback=None):
        self.T = int(T)
        self.group_of = np.asarray(group_of, dtype=np.int64)
        if self.group_of.shape != (self.T,):
            raise ValueError("need one group index per timestep")
        self.models = dict(models)
        self.fallback = fallback
        for t in range(self.T):
            if int(self.group_of[t]) not in self.models and fallback is None:
                raise ValueError(f"timestep {t} resolves to no model")

    @classmethod
    def from_plan(cls, plan: GroupPlan, models: dict, fallback=None) -> "ModelBank":
        return cls(plan.T, plan.group_index_table(), models, fallback)

    @classmethod
    def single(cls, model, T: int) -> "ModelBank":
        return cls(T, np.zeros(T, dtype=np.int64), {0: model})

    def model_for(self, t: int):
        return self.models.get(int(self.group_of[t]), self.fallback)

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        model = self.model_for(t)
        if isinstance(model, Parameters):
            return forward(model, x_t, t).astype(np.float64)
        return np.asarray(model(x_t, t), dtype=np.float64)

    def flops_at(self, t: int) -> int:
        model = self.model_for(t)
        if not isinstance(model, Parameters):
            raise TypeError("FLOPs are only defined for Parameters-backed models")
        return count_flops(model.spec)


def strided_timesteps(T: int, S: int) -> np.ndarray:
    """``S`` evenly strided timesteps in descending order, always ending at 0."""
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    if S == 1:
        return np.array([T - 1], dtype=np.int64)
    ts = np.floor(np.arange(S) * (T - 1) / (S - 1) + 0.5).astype(np.int64)
    return ts[::-1].copy()


def ddim_sample(bank, s: NoiseSchedule, steps: int, n: int, seed, dim: int | None = None,
                return_trace: bool = False):
    """Deterministic (eta = 0) DDIM from seeded Gaussian noise.

    ``bank`` may be a :class:`ModelBank` or a single model. Returns the
    final clean-data estimate, plus per-step estimates if ``return_trace``.
    """
    if not isinstance(bank, ModelBank):
        bank = ModelBank.single(bank, s.T)
    if bank.T != s.T:
        raise ValueError("model bank and schedule disagree on T")
    if dim is None:
        some = next(iter(bank.models.values()), bank.fallback)
        dim = some.spec.input_dim
    ts = strided_timesteps(s.T, steps)
    x = np.random.default_rng(seed).standard_normal((n, dim))
    trace = []
    x0_hat = x
    for i, t in enumerate(ts):
        ab = s.alpha_bars[t]
        eps_hat = bank.predict(x, int(t))
        x0_hat = (x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
        if return_trace:
            trace.append(x0_hat)
        if i + 1 < len(ts):
            ab_prev = s.alpha_bars[ts[i + 1]]
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
    return (x0_hat, trace) if return_trace else x0_hat


def trajectory_flops(bank: ModelBank, steps: int) -> tuple[float, int]:
    """Mean FLOPs per model evaluation and total FLOPs per sample over a DDIM run."""
    ts = strided_timesteps(bank.T, steps)
    total = sum(bank.flops_at(int(t)) for t in ts)
    return total / len(ts), int(total)


def energy_distance(A, B) -> float:
    """V-statistic energy distance ``2E|a-b| - E|a-a'| - E|b-b'|``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    cross = cdist(A, B).mean()
    within_a = cdist(A, A).mean()
    within_b = cdist(B, B).mean()
    return float(max(0.0, 2 * cross - within_a - within_b))


def sliced_wasserstein(A, B, n_projections: int = 64, seed=0) -> float:
    """Mean 1-Wasserstein distance over random unit-direction projections."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    dirs = np.random.default_rng(seed).standard_normal((n_projections, A.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = A @ dirs.T, B @ dirs.T
    return float(np.mean([wasserstein_distance(pa[:, j], pb[:, j]) for j in range(n_projections)]))


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    sliced_wasserstein: float
    n_samples: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_samples(samples, reference, seed: int = 0) -> MetricReport:
    return MetricReport(energy_distance(samples, reference), sliced_wasserstein(samples, reference, 64, seed),
                        int(len(samples)), int(seed))


def evaluate_run(bank, cfg, schedule: NoiseSchedule | None = None, reference=None) -> MetricReport:
    """Sample ``cfg.sampling.n_samples`` points and compare them to fresh reference data."""
    from .pipeline import make_schedule

    schedule = schedule or make_schedule(cfg)
    n, seed = cfg.sampling.n_samples, cfg.sampling.seed
    samples = ddim_sample(bank, schedule, cfg.sampling.steps, n, seed)
    if reference is None:
        reference = sample_dataset(cfg.dataset.name, n, [seed, 1])
    return evaluate_samples(samples, reference, seed)


def write_samples_csv(samples, path) -> None:
    samples = np.asarray(samples)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(samples.shape[1])])
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
