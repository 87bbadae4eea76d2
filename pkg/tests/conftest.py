import functools
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_dataset():
    """A reduced three-group dataset shared by integration tests."""
    from densgroup.simulation import DgpConfig, generate_dataset

    return generate_dataset(DgpConfig(n=40, T=80, seed=11), 0)


@pytest.fixture(scope="session")
def small_lqd(small_dataset):
    from densgroup.pipeline import densities_from_samples, lqd_matrix

    dens = densities_from_samples(small_dataset.samples, small_dataset.grid)
    return dens, lqd_matrix(dens)


# --------------------------------------------------------------------------
# Monte Carlo runs shared by the reference-example and acceptance suites
# --------------------------------------------------------------------------

MC_SEED = 7
MC_REPS = 50


@functools.lru_cache(maxsize=None)
def _mc_cell(n, T, reps=MC_REPS, seed=MC_SEED):
    from densgroup.simulation import DgpConfig, run_mc

    start = time.perf_counter()
    report = run_mc(DgpConfig(n=n, T=T, seed=seed), reps=reps)
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def mc_cell():
    """``mc_cell(n, T)`` returns ``(McReport, seconds)``, computed once per session."""
    return _mc_cell


# --------------------------------------------------------------------------
# one pass/fail line per acceptance criterion
# --------------------------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []
    config.addinivalue_line("markers", "acceptance: acceptance criterion check")


@pytest.fixture
def acceptance(request):
    lines = request.config.stash[_ACCEPTANCE]

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
