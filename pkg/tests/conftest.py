import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fragvol.kernels import PowerLawModel
from fragvol.mesh import build_uniform_mesh

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ALPHAS = (0.5, 0.1, -0.5, -1.0, -2.0)
NUS = (0.0, -0.5, -1.0, -1.5)
PRESET_PAIRS = [(a, n) for a in ALPHAS for n in NUS]


@pytest.fixture
def mesh10():
    return build_uniform_mesh(5, 15, 10)


@pytest.fixture
def powerlaw():
    return PowerLawModel(0.5, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record the verdict of one acceptance criterion for the end-of-run summary."""
    table = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, title, passed, detail=""):
        table[number] = (title, bool(passed), detail)
        line = f"criterion {number} ({title}): {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        title, passed, detail = table[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
