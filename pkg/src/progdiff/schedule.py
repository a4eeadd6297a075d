"""Discrete-time noise schedules and the forward diffusion process.

Timesteps are 0-indexed ``0..T-1``; index 0 is the least noisy step and
``T-1`` the noisiest. All schedule arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "build_linear_schedule",
    "build_cosine_schedule",
    "build_schedule",
    "forward_diffuse",
    "snr_db",
    "snr_db_all",
]

COSINE_BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep betas and their cumulative signal coefficients.

    Attributes
    ----------
    betas : ndarray of shape (T,)
    alpha_bars : ndarray of shape (T,)
        ``alpha_bars[t] = prod_{s <= t} (1 - betas[s])``.
    kind : str
        Schedule family, kept for serialization.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)
    kind: str = "custom"

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-d array")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in the open interval (0, 1)")
        alpha_bars = np.cumprod(1.0 - betas)
        if not alpha_bars[-1] > 0:
            raise ValueError("alpha_bars underflowed to zero; schedule too aggressive")
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check_t(self, t):
        t_arr = np.asarray(t)
        if not np.issubdtype(t_arr.dtype, np.integer):
            raise TypeError(f"timesteps must be integers, got {t_arr.dtype}")
        if np.any(t_arr < 0) or np.any(t_arr >= self.T):
            raise IndexError(f"timestep out of range [0, {self.T})")
        return t_arr


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (0 < beta_start < 1 and 0 < beta_end < 1):
        raise ValueError("beta_start and beta_end must lie in (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")
    return NoiseSchedule(np.linspace(beta_start, beta_end, int(T), dtype=np.float64), kind="linear")


def build_cosine_schedule(T: int, offset: float = 0.008) -> NoiseSchedule:
    """Cosine schedule with implied betas clamped at 0.999.

    ``alpha_bars[t] = f(t + 1) / f(0)`` with
    ``f(u) = cos^2(((u / T) + offset) / (1 + offset) * pi / 2)``.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not offset > 0:
        raise ValueError("offset must be positive")
    T = int(T)
    grid = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((grid / T) + offset) / (1.0 + offset) * math.pi / 2) ** 2
    ratio = f[1:] / f[:-1]
    betas = np.clip(1.0 - ratio, 0.0, COSINE_BETA_MAX)
    return NoiseSchedule(betas, kind="cosine")


def build_schedule(kind: str, T: int, **kwargs) -> NoiseSchedule:
    if kind == "linear":
        return build_linear_schedule(T, kwargs.get("beta_start", 1e-4), kwargs.get("beta_end", 0.02))
    if kind == "cosine":
        return build_cosine_schedule(T, kwargs.get("offset", 0.008))
    raise ValueError(f"unknown schedule kind {kind!r}")


def forward_diffuse(x0, t, eps, s: NoiseSchedule) -> np.ndarray:
    """Noise ``x0`` to timestep ``t``: ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or one timestep per row of a 2-d ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    t = s._check_t(t)
    ab = s.alpha_bars[t]
    if ab.ndim == 1 and x0.ndim == 2:
        if ab.shape[0] != x0.shape[0]:
            raise ValueError("one timestep per row required")
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def snr_db(s: NoiseSchedule, t) -> float:
    """Signal-to-noise ratio of timestep ``t`` in decibels."""
    t = s._check_t(t)
    ab = s.alpha_bars[t]
    return 10.0 * np.log10(ab / (1.0 - ab))


def snr_db_all(s: NoiseSchedule) -> np.ndarray:
    return 10.0 * np.log10(s.alpha_bars / (1.0 - s.alpha_bars))
