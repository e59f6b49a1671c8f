import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    from distlab.numkit import Rng
    return Rng(2024)


_CRITERIA: dict[int, str] = {}


def report(n: int, ok: bool, message: str) -> None:
    _CRITERIA[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {message}"
    print(_CRITERIA[n])


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
