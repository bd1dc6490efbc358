import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rwre.environment import EnvSpec, Rademacher, drift_increments, environment_from_omega  # noqa: E402


def env_from_increments(inc, b=1.0, alpha=0.25):
    """Environment whose potential has the given increments ``U(y) - U(y-1)``."""
    inc = np.asarray(inc, dtype=float)
    spec = EnvSpec(Rademacher(), b, alpha, inc.size)
    return environment_from_omega(spec, inc + drift_increments(b, alpha, inc.size))


@pytest.fixture
def flat_env():
    """``U == 0`` on 200 sites."""
    spec = EnvSpec(Rademacher(), 1.0, 0.25, 200)
    return environment_from_omega(spec, drift_increments(1.0, 0.25, 200))


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Records one PASS/FAIL line per acceptance criterion; returns the verdict."""
    log = request.config.stash[ACCEPTANCE]

    def record(number, title, ok, detail):
        line = f"criterion {number:>2}  {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        log.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE, [])
    if log:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(log):
            terminalreporter.write_line(line)
