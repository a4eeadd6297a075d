"""SNR-driven FLOPs targets, per-group FLOPs limits and timestep grouping."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .schedule import NoiseSchedule, snr_db_all

__all__ = [
    "FlopsBudget",
    "DifficultyProfile",
    "GroupPlan",
    "SCHEDULE_SHAPES",
    "difficulty_profile",
    "shaped_profile",
    "eq14_limits",
    "group_limits",
    "partition_timesteps",
    "plan_groups",
    "format_plan",
    "format_ranges",
]

SCHEDULE_SHAPES = ("snr", "constant", "uni-increasing", "uni-decreasing")


@dataclass(frozen=True)
class FlopsBudget:
    """Fraction ``k`` of ``F_max`` granted to the easiest timestep."""

    k: float
    F_max: float

    def __post_init__(self):
        if not 0 < self.k <= 1:
            raise ValueError(f"k must lie in (0, 1], got {self.k}")
        if not self.F_max > 0:
            raise ValueError(f"F_max must be positive, got {self.F_max}")


@dataclass(frozen=True)
class DifficultyProfile:
    s_n: np.ndarray
    flops_target: np.ndarray
    budget: FlopsBudget
    snr: np.ndarray | None = None


@dataclass(frozen=True)
class GroupPlan:
    """Timestep groups with half-open FLOPs intervals ``(v[i], w[i]]``."""

    v: np.ndarray
    w: np.ndarray
    members: tuple
    profile: DifficultyProfile

    @property
    def N(self) -> int:
        return len(self.members)

    @property
    def T(self) -> int:
        return int(self.profile.flops_target.size)

    @property
    def active_groups(self) -> list[int]:
        return [i for i, m in enumerate(self.members) if len(m)]

    def group_of(self, t: int) -> int:
        return int(self._lookup[t])

    @cached_property
    def _lookup(self) -> np.ndarray:
        table = np.empty(self.T, dtype=np.int64)
        for i, m in enumerate(self.members):
            table[np.asarray(m, dtype=np.int64)] = i
        return table

    def group_index_table(self) -> np.ndarray:
        """Group index per timestep."""
        return self._lookup.copy()


def difficulty_profile(s: NoiseSchedule, b: FlopsBudget) -> DifficultyProfile:
    """Map standardized negative SNR onto ``[k F_max, F_max]``."""
    neg = -snr_db_all(s)
    std = neg.std()  # population std
    if std == 0 or neg.size == 1:
        s_n = np.zeros_like(neg)
        targets = np.full_like(neg, b.k * b.F_max)
        return DifficultyProfile(s_n, targets, b, -neg)
    s_n = (neg - neg.mean()) / std
    span = s_n.max() - s_n.min()
    if span == 0:
        targets = np.full_like(neg, b.k * b.F_max)
    else:
        targets = b.k * b.F_max + (1 - b.k) * ((s_n - s_n.min()) / span) * b.F_max
        # guard the top end against a one-ulp overshoot of F_max
        targets = np.clip(targets, b.k * b.F_max, b.F_max)
    return DifficultyProfile(s_n, targets, b, -neg)


def shaped_profile(s: NoiseSchedule, b: FlopsBudget, shape: str = "snr") -> DifficultyProfile:
    """FLOPs targets for the alternative per-timestep schedules.

    ``snr`` is the difficulty-driven mapping; ``constant`` gives every
    timestep ``(1 + k) / 2 * F_max``; ``uni-increasing``/``uni-decreasing``
    interpolate linearly in ``t`` between ``k F_max`` and ``F_max``.
    """
    if shape == "snr":
        return difficulty_profile(s, b)
    T = s.T
    lo, hi = b.k * b.F_max, b.F_max
    if shape == "constant":
        targets = np.full(T, (1 + b.k) / 2 * b.F_max)
    elif shape == "uni-increasing":
        targets = np.linspace(lo, hi, T) if T > 1 else np.array([lo])
    elif shape == "uni-decreasing":
        targets = np.linspace(hi, lo, T) if T > 1 else np.array([lo])
    else:
        raise ValueError(f"unknown schedule shape {shape!r}; expected one of {SCHEDULE_SHAPES}")
    return DifficultyProfile(np.zeros(T), targets, b, snr_db_all(s))


def eq14_limits(N: int, b: FlopsBudget) -> np.ndarray:
    """Unclamped upper limits ``(i/N + (N-i)/N * k) * F_max`` for ``i < N``."""
    i = np.arange(N, dtype=np.float64)
    return (i / N + (N - i) / N * b.k) * b.F_max


def group_limits(N: int, b: FlopsBudget) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper FLOPs bounds per group.

    The top limit is raised to ``F_max`` so the hardest timesteps, whose
    targets sit above the unclamped top limit, still fall in a group.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    raw = eq14_limits(int(N), b)
    w = raw.copy()
    w[-1] = max(w[-1], b.F_max)
    v = np.concatenate([[0.0], raw[:-1]])
    return v, w


def partition_timesteps(p: DifficultyProfile, v: np.ndarray, w: np.ndarray) -> GroupPlan:
    """Assign each timestep to the group with ``v[i] < target <= w[i]``."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    targets = p.flops_target
    # first i with w[i] >= target; v[i] == w[i-1] < target by construction
    idx = np.searchsorted(w, targets, side="left")
    bad = (idx >= w.size)
    if np.any(bad):
        t = int(np.flatnonzero(bad)[0])
        raise ValueError(f"timestep {t} (target {targets[t]!r}) is above every group limit")
    ok = v[idx] < targets
    if not np.all(ok):
        t = int(np.flatnonzero(~ok)[0])
        raise ValueError(f"timestep {t} (target {targets[t]!r}) is not above its group's lower bound")
    members = tuple(tuple(int(t) for t in np.flatnonzero(idx == i)) for i in range(w.size))
    return GroupPlan(v, w, members, p)


def plan_groups(s: NoiseSchedule, N: int, b: FlopsBudget, shape: str = "snr") -> GroupPlan:
    """Profile, limits and partition in one call."""
    v, w = group_limits(N, b)
    return partition_timesteps(shaped_profile(s, b, shape), v, w)


def format_ranges(ts) -> str:
    """Compact ``a-b,c`` rendering of a sorted timestep list."""
    if not ts:
        return "-"
    out, start, prev = [], ts[0], ts[0]
    for t in ts[1:]:
        if t == prev + 1:
            prev = t
            continue
        out.append(f"{start}-{prev}" if start != prev else f"{start}")
        start = prev = t
    out.append(f"{start}-{prev}" if start != prev else f"{start}")
    return ",".join(out)


def format_plan(plan: GroupPlan) -> str:
    """Human-readable plan: budget, per-group limits and members, per-timestep targets."""
    b = plan.profile.budget
    lines = [
        f"N = {plan.N}",
        f"k = {b.k!r}",
        f"F_max = {b.F_max!r}",
        f"T = {plan.T}",
        "",
        "group  lower_flops      upper_flops      size  timesteps",
    ]
    for i, m in enumerate(plan.members):
        lines.append(f"{i:<6d} {plan.v[i]:<16.6g} {plan.w[i]:<16.6g} {len(m):<5d} {format_ranges(m)}")
    lines += ["", "t  snr_db  flops_target  group"]
    table = plan.group_index_table()
    snr = plan.profile.snr
    for t, tgt in enumerate(plan.profile.flops_target):
        s = f"{snr[t]:.6g}" if snr is not None else "nan"
        lines.append(f"{t} {s} {tgt:.9g} {table[t]}")
    return "\n".join(lines) + "\n"
