import numpy as np
import pytest

from queuegame import SystemConfig, make_policy


@pytest.fixture
def exp3_for():
    def build(config, kind="EXP3", **kw):
        return [make_policy(kind, config.m, config.horizon, **kw) for _ in range(config.n)]

    return build


def draws(arrival, pick, serve):
    from queuegame.model import StepDraws

    return StepDraws(np.asarray(arrival, float), np.asarray(pick, float), np.asarray(serve, float))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
