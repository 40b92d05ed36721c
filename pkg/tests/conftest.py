import time

import pytest

from qrlc.config import preset
from qrlc.gates import named_action_space
from qrlc.oracle import bfs_table
from qrlc.qnet import train


@pytest.fixture(scope="session")
def xyt_space():
    return named_action_space("1q-xyt")


@pytest.fixture(scope="session")
def xyt_table(xyt_space):
    return bfs_table(xyt_space, 8)


@pytest.fixture(scope="session")
def desk_model(xyt_space):
    """Desk preset trained for 8 loops on {+-X/2, +-Y/2, T, T-dagger}; shared across modules."""
    cfg = preset("desk")
    assert cfg.train.loops == 8
    t0 = time.perf_counter()
    net, log = train(cfg.space(), cfg.train)
    return net, log, time.perf_counter() - t0


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; asserts on failure."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
