import time
from pathlib import Path

import pytest

from funnelfb.config import load_config

ROOT = Path(__file__).resolve().parents[1]
VERIFY_CONFIG = ROOT / "configs" / "verify.yaml"

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verify_config():
    return load_config(VERIFY_CONFIG)


@pytest.fixture(scope="session")
def sweep_scenarios(verify_config):
    return verify_config.sweep.expand(verify_config.defaults)


@pytest.fixture(scope="session")
def sweep_runs(sweep_scenarios):
    from funnelfb.engine import integrate

    integrate(sweep_scenarios[0])  # compile outside the timed region
    t0 = time.perf_counter()
    runs = [integrate(s) for s in sweep_scenarios]
    return runs, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
