import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fockqng.control import GrapeConfig, SystemParams, grape_optimize, simulate_preparation_chain  # noqa: E402
from fockqng.qng import OptimizerConfig, cached_threshold_curve, default_a_grid  # noqa: E402

GRAPE_DURATIONS = {1: 1.2e-6, 2: 2.0e-6, 3: 3.0e-6}
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def curve_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("curves")


@pytest.fixture(scope="session")
def threshold_curves(curve_cache):
    """Default-configuration threshold curves, computed lazily per n."""
    cache = {}

    def get(n):
        if n not in cache:
            start = time.perf_counter()
            cache[n] = cached_threshold_curve(n, default_a_grid(), OptimizerConfig(), curve_cache)
            get.seconds[n] = time.perf_counter() - start
        return cache[n]

    get.seconds = {}
    return get


@pytest.fixture(scope="session")
def grape_results():
    cache = {}

    def get(n):
        if n not in cache:
            start = time.perf_counter()
            params = SystemParams(phonon_levels=n + 4)
            cache[n] = grape_optimize(n, GRAPE_DURATIONS[n], params, GrapeConfig())
            get.seconds[n] = time.perf_counter() - start
        return cache[n]

    get.seconds = {}
    return get


@pytest.fixture(scope="session")
def chain_results(grape_results):
    """Device-noise preparation chain for the session GRAPE pulses."""
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = simulate_preparation_chain(grape_results(n).pulse, n, SystemParams(phonon_levels=n + 4))
        return cache[n]

    return get


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
