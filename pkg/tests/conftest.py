import math

import numpy as np
import pytest

from stratsplit.engine import LevelSchedule, Orientation, ProblemSpec
from stratsplit.kernels import TransitionKernel


def uniform_spec(integrand=None):
    """X ~ U(0, 1), S(x) = x, and an exact resampler on ``[gamma, 1]`` as kernel."""

    def sample_initial(rng, m):
        return rng.random((m, 1))

    def performance(x):
        return x[:, 0]

    def kernel_factory(t, level):
        lo = max(level, 0.0)
        return TransitionKernel(lambda x, rng: rng.uniform(lo, 1.0, size=x.shape))

    return ProblemSpec(
        sample_initial,
        performance,
        integrand or (lambda x: x[:, 0] ** 2),
        kernel_factory,
        Orientation.SUPER,
        "uniform",
    )


def fixed_spec(values):
    """Initial sample is exactly ``values``; kernels are the identity."""
    values = np.asarray(values, dtype=float)

    def sample_initial(rng, m):
        return np.resize(values, m).reshape(m, 1)

    return ProblemSpec(
        sample_initial,
        lambda x: x[:, 0],
        lambda x: x[:, 0],
        lambda t, level: TransitionKernel(lambda x, rng: x),
        Orientation.SUPER,
    )


def check_identities(run, tol=1e-12):
    """Accounting and telescoping identities of a single run."""
    assert run.estimate == math.fsum(r.C_hat for r in run.strata)
    P = sum(r.P_hat for r in run.strata)
    assert abs(P - (1.0 - math.prod(r.R_hat for r in run.strata))) <= tol
    for r in run.strata:
        assert 0.0 <= r.R_hat <= 1.0
        assert 0.0 <= r.P_hat <= 1.0
        if r.size_Z == 0:
            assert r.C_hat == 0.0


@pytest.fixture
def uniform():
    return uniform_spec()


@pytest.fixture
def uniform_levels():
    return LevelSchedule((0.0, 0.3, 0.6, math.inf))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
