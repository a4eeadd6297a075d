import numpy as np
import pytest

from progdiff.denoiser import Batch, DenoiserSpec, init_params
from progdiff.schedule import build_cosine_schedule


@pytest.fixture
def cosine100():
    return build_cosine_schedule(100)


@pytest.fixture
def small_spec():
    return DenoiserSpec(2, (8, 6, 5), 4)


@pytest.fixture
def small_params(small_spec):
    return init_params(small_spec, 0)


def make_batch(n, dim, T, seed=0, timesteps=None):
    rng = np.random.default_rng(seed)
    ts = np.arange(T) if timesteps is None else np.asarray(timesteps)
    return Batch(rng.standard_normal((n, dim)), ts[rng.integers(0, len(ts), n)], rng.standard_normal((n, dim)))


@pytest.fixture
def batch_factory():
    return make_batch


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
