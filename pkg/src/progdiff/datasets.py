"""Two-dimensional toy distributions standing in for image datasets."""

from __future__ import annotations

import numpy as np

DATASETS = ("eight-gaussians", "two-moons", "swiss-roll")


def eight_gaussians(n: int, rng: np.random.Generator) -> np.ndarray:
    """Eight modes on a circle of radius 2, isotropic noise sigma 0.05."""
    angles = 2 * np.pi * rng.integers(0, 8, n) / 8
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + 0.05 * rng.standard_normal((n, 2))


def two_moons(n: int, rng: np.random.Generator) -> np.ndarray:
    upper = rng.random(n) < 0.5
    theta = np.pi * rng.random(n)
    x = np.where(upper, np.cos(theta), 1 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x - 0.5, y - 0.25], axis=1) * 1.5
    return pts + 0.05 * rng.standard_normal((n, 2))


def swiss_roll(n: int, rng: np.random.Generator) -> np.ndarray:
    t = 1.5 * np.pi * (1 + 2 * rng.random(n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 5.0
    return pts + 0.05 * rng.standard_normal((n, 2))


_GENERATORS = {"eight-gaussians": eight_gaussians, "two-moons": two_moons, "swiss-roll": swiss_roll}


def sample_dataset(name: str, n: int, seed) -> np.ndarray:
    """Draw ``n`` points from the named distribution with a seeded generator."""
    try:
        gen = _GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}") from None
    return gen(int(n), np.random.default_rng(seed))
