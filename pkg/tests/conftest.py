from __future__ import annotations

import numpy as np
import pytest

from fibermercer import Factor, Interval, KernelSpec, discretize, gauss_legendre, parameter_grid

UNIT = Interval(0.0, 1.0)


def builtin_specs() -> dict[str, KernelSpec]:
    """One moderate instance of every analytic kernel variant."""
    return {
        "separable": KernelSpec.separable((1.0, 1.0), Factor("sin", k=2)),
        "gaussian": KernelSpec.gaussian((0.1, 0.05)),
        "brownian": KernelSpec.brownian((1.0, 1.0)),
        "low_rank": KernelSpec.low_rank([(1.0, -0.5), (0.5, 0.25), (0.1,)]),
    }


def grids(p: int = 32, m: int = 5):
    return gauss_legendre(p, UNIT), parameter_grid(m, UNIT)


def discretized(name: str, p: int = 32, m: int = 5):
    quad, pgrid = grids(p, m)
    return discretize(builtin_specs()[name], quad, pgrid)


@pytest.fixture(params=sorted(builtin_specs()))
def builtin_kernel(request):
    return discretized(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
