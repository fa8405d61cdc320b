import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robustpo.envs import make_chain, make_tomato
from robustpo.mdp import OccupancyMeasure

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def tomato():
    return make_tomato()


@pytest.fixture(scope="session")
def chain():
    return make_chain(4, discount=0.9, seed=3)


def occ(values):
    """OccupancyMeasure from a flat list, laid out as a single state."""
    return OccupancyMeasure(np.asarray(values, dtype=np.float64)[None, :])


ACCEPTANCE = []


def record(number, title, ok, detail):
    """Log one acceptance criterion outcome; the summary prints them in order."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE, key=lambda x: x[0]):
            terminalreporter.write_line(line)
