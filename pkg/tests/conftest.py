import math

import numpy as np
import pytest

from approxctl.families import DampingSpec, TimeGrid, build_kernel
from approxctl.scenario import load_scenario
from approxctl.spectral import ModeSet


@pytest.fixture(scope="session")
def wave():
    return load_scenario("wave_example")


@pytest.fixture(scope="session")
def wave_kernel(wave):
    return wave.kernel()


@pytest.fixture(scope="session")
def free_kernel():
    """Undamped, N=16, M=1024, T=pi."""
    return build_kernel(ModeSet.first(16), DampingSpec.zero(), TimeGrid(math.pi, 1024))


@pytest.fixture(scope="session")
def small_kernel():
    """Cheap damped kernel for property tests: N=8, M=256."""
    return build_kernel(ModeSet.first(8), DampingSpec.cosine(0.5), TimeGrid(math.pi, 256))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    log = request.config.stash[ACCEPTANCE]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        log.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(ACCEPTANCE, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
