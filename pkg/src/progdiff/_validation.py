"""Input validation shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_samples(X, min_samples: int = 2) -> np.ndarray:
    """Finite 2-d float64 array with at least ``min_samples`` rows."""
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples, ensure_all_finite=True)


def check_seed(random_state) -> int:
    """Integer seed from an int, a Generator/RandomState, or None."""
    if random_state is None:
        return int(np.random.default_rng().integers(2 ** 31))
    if isinstance(random_state, numbers.Integral):
        if random_state < 0:
            raise ValueError("random_state must be non-negative")
        return int(random_state)
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2 ** 31))
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(2 ** 31))
    raise ValueError(f"{random_state!r} cannot be used to seed a generator")


def check_timestep(t, T: int) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError("timesteps must be integers")
    if np.any(t < 0) or np.any(t >= T):
        raise ValueError(f"timesteps must lie in [0, {T})")
    return t
