import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from gglm.model import ModelShape, Trajectory, unpack_params  # noqa: E402
from gglm.simulate import GenSpec, generate_params, simulate_poisson  # noqa: E402

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_trajectory(rng, L=2, d=2, N=30, high=4, mu=1):
    shape = ModelShape(L, d, mu)
    states = rng.integers(0, high, size=(N + d, shape.n)).astype(float)
    return Trajectory(shape, states)


def stable_poisson(L=2, d=2, N=2000, a=1.0, b=0.5, seed=0):
    shape = ModelShape(L, d)
    beta = generate_params(GenSpec(shape, a, b, seed))
    return beta, simulate_poisson(beta, N, seed + 1000)


@pytest.fixture
def small_poisson():
    return stable_poisson()


def random_param(rng, shape, low=-1.0, high=1.0):
    return unpack_params(rng.uniform(low, high, shape.kappa()), shape)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
